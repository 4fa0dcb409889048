#include "multiverse/json_io.hpp"

#include <sstream>

namespace multiverse::json_io {

namespace {

const char* finding_kind(grammar::ValidationFinding::Kind kind) {
  using Kind = grammar::ValidationFinding::Kind;
  switch (kind) {
    case Kind::IndexGap: return "index_gap";
    case Kind::IndexMismatch: return "index_mismatch";
    case Kind::MissingLabel: return "missing_label";
    case Kind::DepthExceeded: return "depth_exceeded";
    case Kind::PathsExceeded: return "paths_exceeded";
  }
  return "?";
}

}  // namespace

json validation_report(const grammar::ValidationReport& report,
                       const std::vector<grammar::GrammarViolation>& violations) {
  json blocks = json::array();
  for (const auto& b : report.blocks) {
    blocks.push_back({{"block_path", b.block_path},
                      {"depth", b.depth},
                      {"paths", b.paths},
                      {"outline_labels", b.outline_labels}});
  }
  json findings = json::array();
  for (const auto& f : report.findings) {
    findings.push_back(
        {{"kind", finding_kind(f.kind)}, {"block_path", f.block_path}, {"detail", f.detail}});
  }
  json viols = json::array();
  for (const auto& v : violations) {
    viols.push_back({{"begin", v.span.begin}, {"end", v.span.end}, {"message", v.message}});
  }
  json depth_histogram = json::object();
  for (const auto& [depth, count] : report.depth_histogram) {
    depth_histogram[std::to_string(depth)] = count;
  }
  return {{"blocks", blocks},
          {"violations", viols},
          {"findings", findings},
          {"depth_histogram", depth_histogram},
          {"path_counts", report.path_counts},
          {"passed", report.passed && violations.empty()}};
}

json visibility_spec(const dag::VisibilitySpec& spec) {
  json rows = json::array();
  for (std::size_t i = 0; i < spec.mask.size(); ++i) {
    json runs = json::array();
    std::size_t j = 0;
    while (j < spec.mask.size()) {
      if (!spec.mask.at(i, j)) {
        ++j;
        continue;
      }
      std::size_t start = j;
      while (j < spec.mask.size() && spec.mask.at(i, j)) ++j;
      runs.push_back({start, j - start});
    }
    rows.push_back(std::move(runs));
  }
  return {{"positions", spec.positions}, {"mask_runs", rows}};
}

json simulation_report(const engine::SimulationReport& report) {
  json lanes = json::array();
  for (const auto& lane : report.lanes) {
    lanes.push_back({{"lane", lane.lane},
                     {"parent", lane.parent},
                     {"ordinal", lane.ordinal},
                     {"tokens_emitted", lane.tokens_emitted},
                     {"terminated_by", std::string(engine::to_string(lane.terminated_by))}});
  }
  return {{"status", report.status == engine::RunStatus::Done ? "done" : "failed"},
          {"failure", report.failure == engine::FailureKind::None
                          ? ""
                          : (report.failure == engine::FailureKind::LimitExceeded
                                 ? "limit_exceeded"
                                 : "grammar_violation_during_decode")},
          {"failure_detail", report.failure_detail},
          {"total_tokens", report.total_tokens},
          {"sequential_length", report.sequential_length},
          {"parallel_degree", report.parallel_degree},
          {"wall_units", report.wall_units},
          {"speedup_vs_sequential", report.speedup_vs_sequential},
          {"merge_count", report.merge_count},
          {"max_merge_bytes_copied", report.max_merge_bytes_copied},
          {"lanes", lanes}};
}

std::string events_jsonl(const std::vector<engine::SimEvent>& events) {
  std::ostringstream os;
  for (const auto& e : events) {
    json line = {{"step", e.step},
                 {"request", e.request},
                 {"worker", e.lane},
                 {"kind", std::string(engine::to_string(e.kind))},
                 {"token", e.token}};
    if (e.value > 0) line["value"] = e.value;
    os << line.dump() << '\n';
  }
  return os.str();
}

json sweep_rows(const std::vector<engine::SweepRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    out.push_back({{"fixture", row.fixture},
                   {"degree", row.degree},
                   {"batch", row.batch},
                   {"latency_per_token", row.latency_per_token},
                   {"speedup", row.speedup}});
  }
  return out;
}

json edit_distance_result(const curator::EditDistanceResult& result) {
  return {{"distance", result.distance}, {"relative", result.relative}, {"pass", result.pass}};
}

json curation_record(const curator::CurationRecord& record) {
  json stages = json::array();
  for (const auto& s : record.stages) {
    stages.push_back({{"stage", s.stage},
                      {"regeneration_count", s.regeneration_count},
                      {"rejected_attempts", s.rejected.size()}});
  }
  json lint = json::array();
  for (const auto& f : record.lint) {
    lint.push_back({{"path", f.path_id},
                    {"phrase", f.phrase},
                    {"begin", f.span.begin},
                    {"end", f.span.end},
                    {"rule", f.rule}});
  }
  return {{"status",
           record.status == curator::CurationStatus::Accepted ? "accepted" : "exhausted"},
          {"failed_stage", record.failed_stage},
          {"stages", stages},
          {"lint", lint}};
}

json kv_dump(const kv::RadixStore& store) {
  json nodes = json::array();
  store.visit_nodes([&](int id, int depth, std::size_t edge, int refcount) {
    nodes.push_back(
        {{"node", id}, {"depth", depth}, {"edge_tokens", edge}, {"refcount", refcount}});
  });
  return {{"nodes", nodes}};
}

}  // namespace multiverse::json_io
