#pragma once

/// JSON views of the report types. Field layouts are pinned by the schema
/// files shipped under schemas/.

#include <json.hpp>

#include "multiverse/curator.hpp"
#include "multiverse/dag.hpp"
#include "multiverse/engine.hpp"
#include "multiverse/grammar.hpp"
#include "multiverse/kvcache.hpp"

namespace multiverse::json_io {

using json = nlohmann::ordered_json;

json validation_report(const grammar::ValidationReport& report,
                       const std::vector<grammar::GrammarViolation>& violations = {});

/// {"positions": [...], "mask_runs": [[[start,len],...], ...]} with one
/// run-length-encoded row of true runs per token.
json visibility_spec(const dag::VisibilitySpec& spec);

json simulation_report(const engine::SimulationReport& report);

/// One JSON object per line: {step, request, worker, kind, token}.
std::string events_jsonl(const std::vector<engine::SimEvent>& events);

json sweep_rows(const std::vector<engine::SweepRow>& rows);

json edit_distance_result(const curator::EditDistanceResult& result);

json curation_record(const curator::CurationRecord& record);

json kv_dump(const kv::RadixStore& store);

}  // namespace multiverse::json_io
