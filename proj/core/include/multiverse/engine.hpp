#pragma once

/**
 * Discrete-event simulator of the fork/join generation engine.
 *
 * A request decodes sequentially until it emits </Goal>; the interpreter has
 * counted the <Outline> tags by then and spawns that many path workers, each
 * forked from the request's KV handle and seeded with the injected tokens
 * "<Path>" + its index label. Workers decode concurrently (one token per
 * lane per step); a worker that emits </Path> or hits the per-worker length
 * cap enters a zombie state keeping its KV alive. Once every sibling is a
 * zombie the request merges prefix + worker KV by index concatenation,
 * injects "<Conclusion>", and resumes sequential decoding.
 *
 * Cost accounting: ConstantStep charges one unit per scheduler step (the
 * memory-bound regime, where batch width is free); BatchCapacity(C) charges
 * ceil(active_tokens / C) per step. Under ConstantStep the wall clock equals
 * the token-level critical path, so speedup == parallel degree exactly.
 *
 * Backends: a scripted replay of a trajectory (or a raw token stream, which
 * may fail mid-decode with a grammar violation), the same replay with the
 * toy model attached (logits computed each step from KV records held in the
 * radix store), or free-running greedy decoding from the toy model.
 */

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "multiverse/dag.hpp"
#include "multiverse/grammar.hpp"
#include "multiverse/kvcache.hpp"
#include "multiverse/tokenizer.hpp"
#include "multiverse/toy_model.hpp"

namespace multiverse::engine {

// ============================================================================
// Cost model
// ============================================================================

enum class CostKind { ConstantStep, BatchCapacity };

struct CostModel {
  CostKind kind = CostKind::ConstantStep;
  int capacity = 1;  // BatchCapacity only

  static CostModel constant_step() { return {CostKind::ConstantStep, 1}; }
  static CostModel batch_capacity(int c) { return {CostKind::BatchCapacity, c}; }

  /// "constant" or "capacity:C".
  static std::optional<CostModel> parse(std::string_view spec);
  std::string str() const;

  double step_cost(std::size_t active_tokens) const;
};

enum class PrefillCharging {
  PerToken,    // injected tokens occupy lane steps like decoded ones (default)
  PerSegment,  // a whole injected run passes through in one step
};

struct EngineLimits {
  std::size_t max_worker_tokens = 4096;
  std::size_t max_request_tokens = 4096;
};

struct RunOptions {
  CostModel cost = CostModel::constant_step();
  EngineLimits limits;
  PrefillCharging prefill = PrefillCharging::PerToken;
  bool record_events = true;
  bool record_visibility = false;  // per-token visible sets, for mask cross-checks
  bool record_logits = false;      // toy backends only
};

// ============================================================================
// Events and report
// ============================================================================

enum class EventKind { Decode, Prefill, Spawn, ZombieEnter, Merge, ReduceStart, Done, Failed };

std::string_view to_string(EventKind kind);

struct SimEvent {
  std::size_t step = 0;
  int request = 0;
  int lane = 0;
  EventKind kind = EventKind::Decode;
  std::string token;      // Decode/Prefill
  int source_index = -1;  // flat position in the source stream; -1 when free-running
  std::size_t value = 0;  // Spawn: child count; Merge: merged length
};

enum class WorkerTermination { None, PathClose, MaxLength };

std::string_view to_string(WorkerTermination t);

struct LaneSummary {
  int lane = 0;
  int parent = -1;    // -1 for the root lane
  int ordinal = 0;    // 1-based among siblings
  std::size_t tokens_emitted = 0;
  WorkerTermination terminated_by = WorkerTermination::None;
};

enum class RunStatus { Done, Failed };
enum class FailureKind { None, GrammarViolationDuringDecode, LimitExceeded };

struct SimulationReport {
  RunStatus status = RunStatus::Done;
  FailureKind failure = FailureKind::None;
  std::string failure_detail;

  std::size_t total_tokens = 0;
  std::size_t sequential_length = 0;  // critical path over emitted tokens
  double parallel_degree = 1.0;       // total / sequential
  double wall_units = 0.0;
  double speedup_vs_sequential = 1.0;

  std::size_t merge_count = 0;
  std::size_t max_merge_bytes_copied = 0;  // must stay 0: merges never copy payloads

  std::vector<LaneSummary> lanes;
  std::vector<SimEvent> events;

  /// Visible source indices per source token (record_visibility).
  std::vector<std::vector<int>> visibility;
  /// Final-step logits per source token (record_logits, toy backends).
  std::vector<std::vector<double>> logits_by_source;

  kv::StorageStats final_kv_stats;
};

// ============================================================================
// Scripted model
// ============================================================================

class CompileError : public std::runtime_error {
 public:
  CompileError(std::size_t token_index, const std::string& detail)
      : std::runtime_error("token " + std::to_string(token_index) + ": " + detail),
        token_index_(token_index),
        detail_(detail) {}

  std::size_t token_index() const { return token_index_; }
  const std::string& detail() const { return detail_; }

 private:
  std::size_t token_index_;
  std::string detail_;
};

struct ScriptItem {
  tok::Token token;
  int source_index = -1;
};

struct CompiledLane {
  int id = 0;
  int parent = -1;
  int ordinal = 0;              // 1-based among siblings
  std::string injected_label;   // workers: index label injected after <Path>
  int path_open_source = -1;    // source index of this worker's <Path>
  int label_source = -1;        // source index of its label token
  std::vector<ScriptItem> items;  // decoded tokens only

  struct Spawn {
    std::size_t after_item = 0;  // fires when next_item reaches this index
    std::vector<int> children;
    int conclusion_source = -1;  // source index of the injected <Conclusion>
  };
  std::vector<Spawn> spawns;
};

struct CompiledScript {
  std::vector<CompiledLane> lanes;  // lane 0 is the root
  std::size_t total_tokens = 0;     // source stream length
  std::vector<tok::Token> source;   // flat source tokens
};

/// Routes a flat token stream onto per-lane scripts, enforcing tag ordering
/// (the §-style counting rule: outline count fixes the worker count). Throws
/// CompileError on the first violation.
CompiledScript compile_script(std::vector<tok::Token> source);

/// Deterministic replay oracle for a trajectory: each lane replays its
/// branch's tokens one per step.
class ScriptedModel {
 public:
  static ScriptedModel from_trajectory(const grammar::Trajectory& t, tok::Tokenizer& tokenizer);
  static ScriptedModel from_tokens(std::vector<tok::Token> tokens);

  const std::vector<tok::Token>& tokens() const { return tokens_; }

 private:
  explicit ScriptedModel(std::vector<tok::Token> tokens) : tokens_(std::move(tokens)) {}
  std::vector<tok::Token> tokens_;
};

// ============================================================================
// Runs
// ============================================================================

/// Scripted replay (payload-free KV store).
SimulationReport run(const ScriptedModel& model, const RunOptions& options = {});

/// Scripted replay with the toy model attached: every step computes logits
/// from KV records resolved out of the radix store, then follows the script.
SimulationReport run_forced(const ScriptedModel& model, const toy::ToyModel& toy,
                            tok::Tokenizer& tokenizer, const RunOptions& options = {});

/// Free-running greedy decoding from the toy model, seeded with a prompt.
/// The interpreter reacts to whatever tags the model emits; generation ends
/// at the request length cap (LimitExceeded) unless the stream fails first.
SimulationReport run_free(const toy::ToyModel& toy, tok::Tokenizer& tokenizer,
                          std::span<const tok::Token> prompt, const RunOptions& options = {});

/// Shared-clock simulation of several scripted requests (a batch).
SimulationReport run_batch(std::span<const ScriptedModel> models,
                           const RunOptions& options = {});

// ============================================================================
// Metrics
// ============================================================================

struct ParallelismStats {
  std::size_t total_tokens = 0;
  std::size_t sequential_length = 0;
  double degree = 1.0;
};

/// Token totals and recursive critical path of a trajectory:
/// seq(block) = plan + max over paths of seq(path) + reduce.
ParallelismStats compute_parallelism(const grammar::Trajectory& t, tok::Tokenizer& tokenizer);

struct SweepRow {
  std::string fixture;
  double degree = 1.0;
  int batch = 1;
  double latency_per_token = 1.0;
  double speedup = 1.0;
};

/// Runs every fixture at every batch size under one cost model. Batch B
/// means B identical copies of the request sharing the scheduler clock.
std::vector<SweepRow> sweep(const std::vector<std::pair<std::string, std::string>>& fixtures,
                            const CostModel& cost, const std::vector<int>& batches,
                            tok::TokenizerMode mode = tok::TokenizerMode::Whitespace,
                            const EngineLimits& limits = {});

/// Header: degree,latency_per_token,batch,speedup
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace multiverse::engine
