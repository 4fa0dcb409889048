#include "multiverse/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace multiverse::engine {

using grammar::TagKind;
using tok::Token;

// ============================================================================
// Cost model
// ============================================================================

std::optional<CostModel> CostModel::parse(std::string_view spec) {
  if (spec == "constant") return constant_step();
  constexpr std::string_view prefix = "capacity:";
  if (spec.substr(0, prefix.size()) == prefix) {
    int c = 0;
    for (char ch : spec.substr(prefix.size())) {
      if (ch < '0' || ch > '9') return std::nullopt;
      c = c * 10 + (ch - '0');
    }
    if (c < 1) return std::nullopt;
    return batch_capacity(c);
  }
  return std::nullopt;
}

std::string CostModel::str() const {
  if (kind == CostKind::ConstantStep) return "constant";
  return "capacity:" + std::to_string(capacity);
}

double CostModel::step_cost(std::size_t active_tokens) const {
  if (active_tokens == 0) return 0.0;
  if (kind == CostKind::ConstantStep) return 1.0;
  std::size_t c = static_cast<std::size_t>(capacity);
  return static_cast<double>((active_tokens + c - 1) / c);
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::Decode: return "decode";
    case EventKind::Prefill: return "prefill";
    case EventKind::Spawn: return "spawn";
    case EventKind::ZombieEnter: return "zombie";
    case EventKind::Merge: return "merge";
    case EventKind::ReduceStart: return "reduce_start";
    case EventKind::Done: return "done";
    case EventKind::Failed: return "failed";
  }
  return "?";
}

std::string_view to_string(WorkerTermination t) {
  switch (t) {
    case WorkerTermination::None: return "none";
    case WorkerTermination::PathClose: return "path_close";
    case WorkerTermination::MaxLength: return "max_length";
  }
  return "?";
}

// ============================================================================
// Script routing
// ============================================================================

namespace {

std::string label_to_prefix(const std::string& label) {
  // "1:" -> "1.", "2.3:" -> "2.3."
  std::string prefix = label;
  if (!prefix.empty() && prefix.back() == ':') prefix.pop_back();
  prefix += '.';
  return prefix;
}

}  // namespace

CompiledScript compile_script(std::vector<Token> source) {
  CompiledScript script;
  script.lanes.push_back(CompiledLane{});
  script.lanes[0].id = 0;

  struct Ctx {
    enum class Phase { AwaitGoal, Goal, AwaitPath, InPath, Conclusion, AwaitClose };
    Phase phase = Phase::AwaitGoal;
    int parent_lane = 0;
    int outlines = 0;
    int paths_seen = 0;
    bool in_outline = false;
    bool after_outline = false;
    bool awaiting_label = false;
    int current_child = -1;
    std::size_t spawn_index = 0;
    std::string label_prefix;
  };
  std::vector<Ctx> stack;

  auto append = [&](int lane, const Token& t, std::size_t idx) {
    script.lanes[static_cast<std::size_t>(lane)].items.push_back(
        ScriptItem{t, static_cast<int>(idx)});
  };

  for (std::size_t idx = 0; idx < source.size(); ++idx) {
    const Token& t = source[idx];
    auto violation = [&](const std::string& msg) -> void { throw CompileError(idx, msg); };

    if (stack.empty()) {
      if (!t.is_tag) {
        append(0, t, idx);
      } else if (t.tag == TagKind::ParallelOpen) {
        append(0, t, idx);
        Ctx ctx;
        ctx.parent_lane = 0;
        stack.push_back(ctx);
      } else {
        violation("unexpected " + t.text + " outside any block");
      }
      continue;
    }

    Ctx& ctx = stack.back();
    switch (ctx.phase) {
      case Ctx::Phase::AwaitGoal:
        if (t.is_tag && t.tag == TagKind::GoalOpen) {
          append(ctx.parent_lane, t, idx);
          ctx.phase = Ctx::Phase::Goal;
        } else {
          violation("expected <Goal> after <Parallel>");
        }
        break;

      case Ctx::Phase::Goal:
        if (!t.is_tag) {
          if (ctx.after_outline && !ctx.in_outline) violation("text between outlines");
          append(ctx.parent_lane, t, idx);
        } else if (t.tag == TagKind::OutlineOpen) {
          if (ctx.in_outline) violation("nested <Outline>");
          ctx.in_outline = true;
          ++ctx.outlines;
          append(ctx.parent_lane, t, idx);
        } else if (t.tag == TagKind::OutlineClose) {
          if (!ctx.in_outline) violation("</Outline> without <Outline>");
          ctx.in_outline = false;
          ctx.after_outline = true;
          append(ctx.parent_lane, t, idx);
        } else if (t.tag == TagKind::GoalClose) {
          if (ctx.in_outline) violation("</Goal> inside <Outline>");
          if (ctx.outlines == 0) violation("</Goal> with zero outlines");
          append(ctx.parent_lane, t, idx);
          CompiledLane::Spawn spawn;
          spawn.after_item = script.lanes[static_cast<std::size_t>(ctx.parent_lane)].items.size();
          for (int k = 1; k <= ctx.outlines; ++k) {
            CompiledLane lane;
            lane.id = static_cast<int>(script.lanes.size());
            lane.parent = ctx.parent_lane;
            lane.ordinal = k;
            spawn.children.push_back(lane.id);
            script.lanes.push_back(std::move(lane));
          }
          auto& parent = script.lanes[static_cast<std::size_t>(ctx.parent_lane)];
          ctx.spawn_index = parent.spawns.size();
          parent.spawns.push_back(std::move(spawn));
          ctx.phase = Ctx::Phase::AwaitPath;
        } else {
          violation("unexpected " + t.text + " inside <Goal>");
        }
        break;

      case Ctx::Phase::AwaitPath:
        if (t.is_tag && t.tag == TagKind::PathOpen) {
          if (ctx.paths_seen == ctx.outlines) violation("more <Path> blocks than outlines");
          auto& parent = script.lanes[static_cast<std::size_t>(ctx.parent_lane)];
          int child = parent.spawns[ctx.spawn_index].children[
              static_cast<std::size_t>(ctx.paths_seen)];
          script.lanes[static_cast<std::size_t>(child)].path_open_source = static_cast<int>(idx);
          ctx.current_child = child;
          ctx.awaiting_label = true;
          ctx.phase = Ctx::Phase::InPath;
        } else if (t.is_tag && t.tag == TagKind::ConclusionOpen) {
          if (ctx.paths_seen < ctx.outlines) {
            violation("only " + std::to_string(ctx.paths_seen) + " paths for " +
                      std::to_string(ctx.outlines) + " outlines");
          }
          auto& parent = script.lanes[static_cast<std::size_t>(ctx.parent_lane)];
          parent.spawns[ctx.spawn_index].conclusion_source = static_cast<int>(idx);
          ctx.phase = Ctx::Phase::Conclusion;
        } else if (!t.is_tag) {
          violation("stray text between paths");
        } else {
          violation("unexpected " + t.text + " between paths");
        }
        break;

      case Ctx::Phase::InPath:
        if (ctx.awaiting_label) {
          if (t.is_tag) violation("path body must begin with its index label");
          {
            std::string expected =
                ctx.label_prefix + std::to_string(ctx.paths_seen + 1) + ":";
            if (t.text != expected) {
              violation("path label \"" + t.text + "\" where \"" + expected +
                        "\" was expected");
            }
            auto& child = script.lanes[static_cast<std::size_t>(ctx.current_child)];
            child.injected_label = t.text;
            child.label_source = static_cast<int>(idx);
            ctx.awaiting_label = false;
          }
        } else if (!t.is_tag) {
          append(ctx.current_child, t, idx);
        } else if (t.tag == TagKind::ParallelOpen) {
          append(ctx.current_child, t, idx);
          Ctx nested;
          nested.parent_lane = ctx.current_child;
          nested.label_prefix = label_to_prefix(
              script.lanes[static_cast<std::size_t>(ctx.current_child)].injected_label);
          stack.push_back(nested);  // invalidates ctx; loop re-fetches next token
        } else if (t.tag == TagKind::PathClose) {
          append(ctx.current_child, t, idx);
          ++ctx.paths_seen;
          ctx.current_child = -1;
          ctx.phase = Ctx::Phase::AwaitPath;
        } else {
          violation("unexpected " + t.text + " inside <Path>");
        }
        break;

      case Ctx::Phase::Conclusion:
        if (!t.is_tag) {
          append(ctx.parent_lane, t, idx);
        } else if (t.tag == TagKind::ConclusionClose) {
          append(ctx.parent_lane, t, idx);
          ctx.phase = Ctx::Phase::AwaitClose;
        } else {
          violation("unexpected " + t.text + " inside <Conclusion>");
        }
        break;

      case Ctx::Phase::AwaitClose:
        if (t.is_tag && t.tag == TagKind::ParallelClose) {
          append(ctx.parent_lane, t, idx);
          stack.pop_back();
        } else {
          violation("expected </Parallel> after </Conclusion>");
        }
        break;
    }
  }

  if (!stack.empty()) {
    throw CompileError(source.size(), "unterminated block at end of stream");
  }
  script.total_tokens = source.size();
  script.source = std::move(source);
  return script;
}

ScriptedModel ScriptedModel::from_trajectory(const grammar::Trajectory& t,
                                             tok::Tokenizer& tokenizer) {
  return ScriptedModel(tokenizer.tokenize(grammar::serialize(t)));
}

ScriptedModel ScriptedModel::from_tokens(std::vector<Token> tokens) {
  return ScriptedModel(std::move(tokens));
}

// ============================================================================
// Simulator
// ============================================================================

namespace {

// Per-lane tag interpreter: mirrors the engine's runtime counting rule.
struct InterpFrame {
  enum class Phase { AwaitGoal, Goal, Wait, AwaitConclusionTag, Conclusion, AwaitClose };
  Phase phase = Phase::AwaitGoal;
  int outlines = 0;
  bool in_outline = false;
  bool after_outline = false;
};

struct InterpAction {
  enum class Kind { None, Spawn, WorkerDone, Violation };
  Kind kind = Kind::None;
  int spawn_count = 0;
  std::string detail;
};

struct LaneRuntime {
  int id = 0;
  int parent = -1;
  int ordinal = 0;
  const CompiledLane* script = nullptr;  // null for free-running lanes
  std::size_t next_item = 0;
  std::size_t next_spawn = 0;

  enum class State { Active, Waiting, Zombie, Done };
  State state = State::Active;

  std::deque<ScriptItem> inject;  // pending injected tokens
  kv::SequenceHandle handle;
  int next_position = 0;
  std::size_t emitted = 0;
  WorkerTermination terminated_by = WorkerTermination::None;
  std::vector<InterpFrame> frames;
  std::string label;
  std::vector<double> last_logits;  // free-running only

  // Spawn bookkeeping (runtime truth, also drives the critical path).
  struct SpawnRecord {
    std::vector<int> children;
    int conclusion_source = -1;
  };
  std::vector<SpawnRecord> spawn_records;
  std::size_t waiting_on = 0;  // index into spawn_records while Waiting
};

InterpAction feed_interpreter(LaneRuntime& lane, const Token& t) {
  InterpAction none;
  auto violation = [&](const std::string& msg) {
    InterpAction a;
    a.kind = InterpAction::Kind::Violation;
    a.detail = msg;
    return a;
  };

  if (lane.frames.empty()) {
    if (!t.is_tag) return none;
    switch (t.tag) {
      case TagKind::ParallelOpen:
        lane.frames.push_back(InterpFrame{});
        return none;
      case TagKind::PathClose: {
        if (lane.parent >= 0) {
          InterpAction a;
          a.kind = InterpAction::Kind::WorkerDone;
          return a;
        }
        return violation("</Path> outside any path");
      }
      default:
        return violation("unexpected " + t.text + " in sequential decode");
    }
  }

  InterpFrame& f = lane.frames.back();
  switch (f.phase) {
    case InterpFrame::Phase::AwaitGoal:
      if (t.is_tag && t.tag == TagKind::GoalOpen) {
        f.phase = InterpFrame::Phase::Goal;
        return none;
      }
      return violation("expected <Goal> after <Parallel>");

    case InterpFrame::Phase::Goal:
      if (!t.is_tag) {
        if (f.after_outline && !f.in_outline) return violation("text between outlines");
        return none;
      }
      switch (t.tag) {
        case TagKind::OutlineOpen:
          if (f.in_outline) return violation("nested <Outline>");
          f.in_outline = true;
          ++f.outlines;
          return none;
        case TagKind::OutlineClose:
          if (!f.in_outline) return violation("</Outline> without <Outline>");
          f.in_outline = false;
          f.after_outline = true;
          return none;
        case TagKind::GoalClose: {
          if (f.in_outline) return violation("</Goal> inside <Outline>");
          if (f.outlines == 0) return violation("</Goal> with zero outlines");
          f.phase = InterpFrame::Phase::Wait;
          InterpAction a;
          a.kind = InterpAction::Kind::Spawn;
          a.spawn_count = f.outlines;
          return a;
        }
        default:
          return violation("unexpected " + t.text + " inside <Goal>");
      }

    case InterpFrame::Phase::Wait:
      return violation("token while waiting for paths");

    case InterpFrame::Phase::AwaitConclusionTag:
      if (t.is_tag && t.tag == TagKind::ConclusionOpen) {
        f.phase = InterpFrame::Phase::Conclusion;
        return none;
      }
      return violation("expected <Conclusion> after merge");

    case InterpFrame::Phase::Conclusion:
      if (!t.is_tag) return none;
      if (t.tag == TagKind::ConclusionClose) {
        f.phase = InterpFrame::Phase::AwaitClose;
        return none;
      }
      return violation("unexpected " + t.text + " inside <Conclusion>");

    case InterpFrame::Phase::AwaitClose:
      if (t.is_tag && t.tag == TagKind::ParallelClose) {
        lane.frames.pop_back();
        return none;
      }
      return violation("expected </Parallel> after </Conclusion>");
  }
  return none;
}

struct RequestRuntime {
  int id = 0;
  std::unique_ptr<kv::RadixStore> store;
  std::vector<LaneRuntime> lanes;
  const CompiledScript* script = nullptr;  // scripted/forced modes
  bool failed = false;
  bool done = false;
  FailureKind failure = FailureKind::None;
  std::string failure_detail;
  std::size_t total_emitted = 0;
};

struct Backend {
  const toy::ToyModel* model = nullptr;  // null: scripted (ids = source indices)
  bool free_running = false;
  tok::Tokenizer* tokenizer = nullptr;
};

class Simulator {
 public:
  Simulator(const RunOptions& options, Backend backend)
      : options_(options), backend_(backend) {}

  void add_scripted_request(const CompiledScript& script) {
    RequestRuntime req;
    req.id = static_cast<int>(requests_.size());
    req.script = &script;
    std::size_t record = backend_.model
                             ? static_cast<std::size_t>(
                                   backend_.model->config().kv_doubles_per_token()) *
                                   sizeof(double)
                             : 0;
    req.store = std::make_unique<kv::RadixStore>(record);
    for (const auto& lane : script.lanes) {
      LaneRuntime rt;
      rt.id = lane.id;
      rt.parent = lane.parent;
      rt.ordinal = lane.ordinal;
      rt.script = &lane;
      rt.state = lane.id == 0 ? LaneRuntime::State::Active : LaneRuntime::State::Done;
      rt.label = lane.injected_label;
      req.lanes.push_back(std::move(rt));
    }
    req.lanes[0].handle = req.store->create();
    requests_.push_back(std::move(req));
  }

  void add_free_request(std::span<const Token> prompt) {
    RequestRuntime req;
    req.id = static_cast<int>(requests_.size());
    std::size_t record =
        static_cast<std::size_t>(backend_.model->config().kv_doubles_per_token()) *
        sizeof(double);
    req.store = std::make_unique<kv::RadixStore>(record);
    LaneRuntime root;
    root.id = 0;
    req.lanes.push_back(std::move(root));
    req.lanes[0].handle = req.store->create();
    for (const auto& t : prompt) {
      req.lanes[0].inject.push_back(ScriptItem{t, -1});
    }
    requests_.push_back(std::move(req));
  }

  SimulationReport run() {
    while (step_once()) {
    }
    return finalize();
  }

 private:
  bool any_active() const {
    for (const auto& req : requests_) {
      if (req.done || req.failed) continue;
      for (const auto& lane : req.lanes) {
        if (lane.state == LaneRuntime::State::Active) return true;
      }
    }
    return false;
  }

  bool step_once() {
    if (!any_active()) return false;
    ++step_;
    std::size_t tokens_this_step = 0;

    for (auto& req : requests_) {
      if (req.done || req.failed) continue;
      // Lanes added mid-step (spawn) start on the next step.
      std::size_t lane_count = req.lanes.size();
      for (std::size_t li = 0; li < lane_count; ++li) {
        if (req.lanes[li].state != LaneRuntime::State::Active) continue;
        tokens_this_step += step_lane(req, static_cast<int>(li));
        if (req.failed) break;
      }
    }

    if (tokens_this_step > 0) wall_ += options_.cost.step_cost(tokens_this_step);

    // End-of-step: merge every waiting lane whose children are all zombies.
    for (auto& req : requests_) {
      if (req.done || req.failed) continue;
      for (auto& lane : req.lanes) {
        if (lane.state != LaneRuntime::State::Waiting) continue;
        maybe_merge(req, lane);
      }
    }
    return true;
  }

  // Returns tokens charged to the step's active count.
  std::size_t step_lane(RequestRuntime& req, int lane_id) {
    LaneRuntime& lane = req.lanes[static_cast<std::size_t>(lane_id)];
    std::size_t charged = 0;
    bool injected_run = false;

    do {
      ScriptItem item;
      bool injected = false;
      if (!lane.inject.empty()) {
        item = lane.inject.front();
        lane.inject.pop_front();
        injected = true;
      } else if (lane.script && lane.next_item < lane.script->items.size()) {
        item = lane.script->items[lane.next_item];
        ++lane.next_item;
      } else if (backend_.free_running) {
        if (lane.last_logits.empty()) {
          fail(req, FailureKind::GrammarViolationDuringDecode,
               "free-running lane has no context to decode from");
          return charged;
        }
        int best = 0;
        for (std::size_t v = 1; v < lane.last_logits.size(); ++v) {
          if (lane.last_logits[v] > lane.last_logits[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(v);
          }
        }
        item.token = token_from_id(best);
        item.source_index = -1;
      } else {
        // Script exhausted.
        finish_lane(req, lane);
        return charged;
      }

      emit(req, lane, item, injected);
      charged = injected_run && options_.prefill == PrefillCharging::PerSegment
                    ? charged
                    : charged + 1;
      injected_run = injected;

      if (req.failed || lane.state != LaneRuntime::State::Active) return charged;

      // With per-segment prefill the whole injected run passes in one step.
    } while (options_.prefill == PrefillCharging::PerSegment && !lane.inject.empty());

    // Script exhausted right after the last token: retire the lane now so the
    // final step count stays equal to the emitted token count.
    if (lane.state == LaneRuntime::State::Active && lane.inject.empty() && lane.script &&
        lane.next_item >= lane.script->items.size() &&
        lane.next_spawn >= lane.script->spawns.size() && !backend_.free_running) {
      finish_lane(req, lane);
    }
    return charged;
  }

  Token token_from_id(int id) {
    if (id >= 0 && id < grammar::kTagLiteralCount) {
      return backend_.tokenizer->tag_token(static_cast<TagKind>(id));
    }
    Token t;
    t.id = id;
    if (backend_.tokenizer &&
        static_cast<std::size_t>(id) < backend_.tokenizer->vocab().size()) {
      t.text = backend_.tokenizer->vocab().text_of(id);
    } else {
      t.text = "tok" + std::to_string(id);
    }
    return t;
  }

  void emit(RequestRuntime& req, LaneRuntime& lane, const ScriptItem& item, bool injected) {
    // Logits for this step come from the context cached so far.
    std::vector<double> kv_record;
    if (backend_.model) {
      auto payload_bytes = req.store->resolve_payloads(lane.handle);
      std::vector<double> ctx(payload_bytes.size() / sizeof(double));
      if (!ctx.empty()) std::memcpy(ctx.data(), payload_bytes.data(), payload_bytes.size());
      toy::StepOutput out =
          backend_.model->step(ctx, lane.handle.length, item.token.id, lane.next_position);
      kv_record = std::move(out.kv);
      if (options_.record_logits && item.source_index >= 0) {
        if (logits_.size() <= static_cast<std::size_t>(item.source_index)) {
          logits_.resize(static_cast<std::size_t>(item.source_index) + 1);
        }
        logits_[static_cast<std::size_t>(item.source_index)] = out.logits;
      }
      lane.last_logits = std::move(out.logits);
    }

    if (options_.record_visibility && item.source_index >= 0 && !backend_.model) {
      auto visible = req.store->resolve(lane.handle);
      std::vector<int> row(visible.begin(), visible.end());
      row.push_back(item.source_index);
      if (visibility_.size() <= static_cast<std::size_t>(item.source_index)) {
        visibility_.resize(static_cast<std::size_t>(item.source_index) + 1);
      }
      visibility_[static_cast<std::size_t>(item.source_index)] = std::move(row);
    }

    // Scripted runs key the KV store by source index so fixtures with
    // repeated words cannot alias across branches; toy runs need vocab ids.
    kv::TokenId cache_id =
        backend_.model ? item.token.id : static_cast<kv::TokenId>(item.source_index);
    std::span<const std::byte> payload;
    std::vector<std::byte> payload_store;
    if (backend_.model) {
      payload_store.resize(kv_record.size() * sizeof(double));
      std::memcpy(payload_store.data(), kv_record.data(), payload_store.size());
      payload = payload_store;
    }
    kv::SequenceHandle next = req.store->extend(lane.handle, {{cache_id}}, payload);
    req.store->release(lane.handle);
    lane.handle = next;

    ++lane.next_position;
    ++lane.emitted;
    ++req.total_emitted;
    log_event(SimEvent{step_, req.id, lane.id,
                       injected ? EventKind::Prefill : EventKind::Decode, item.token.text,
                       item.source_index, 0});

    if (req.total_emitted > options_.limits.max_request_tokens) {
      fail(req, FailureKind::LimitExceeded,
           "request exceeded " + std::to_string(options_.limits.max_request_tokens) +
               " tokens");
      return;
    }

    InterpAction action = feed_interpreter(lane, item.token);
    switch (action.kind) {
      case InterpAction::Kind::None:
        break;
      case InterpAction::Kind::Violation:
        fail(req, FailureKind::GrammarViolationDuringDecode, action.detail);
        return;
      case InterpAction::Kind::WorkerDone:
        enter_zombie(req, lane, WorkerTermination::PathClose);
        return;
      case InterpAction::Kind::Spawn:
        spawn_children(req, lane, action.spawn_count);
        return;
    }

    // Per-worker length cap: zombie out, the reduce proceeds without the tail.
    if (lane.parent >= 0 && lane.state == LaneRuntime::State::Active &&
        lane.emitted >= options_.limits.max_worker_tokens) {
      enter_zombie(req, lane, WorkerTermination::MaxLength);
    }
  }

  void spawn_children(RequestRuntime& req, LaneRuntime& lane, int count) {
    LaneRuntime::SpawnRecord record;
    const CompiledLane::Spawn* compiled = nullptr;
    if (lane.script && lane.next_spawn < lane.script->spawns.size()) {
      compiled = &lane.script->spawns[lane.next_spawn];
      ++lane.next_spawn;
    }

    auto forks = req.store->fork(lane.handle, count);
    std::string parent_prefix = lane.label.empty() ? "" : label_to_prefix(lane.label);

    for (int k = 1; k <= count; ++k) {
      int child_id;
      if (compiled) {
        child_id = compiled->children[static_cast<std::size_t>(k - 1)];
      } else {
        child_id = static_cast<int>(req.lanes.size());
        LaneRuntime fresh;
        fresh.id = child_id;
        req.lanes.push_back(std::move(fresh));
      }
      LaneRuntime& child = req.lanes[static_cast<std::size_t>(child_id)];
      child.parent = lane.id;
      child.ordinal = k;
      child.state = LaneRuntime::State::Active;
      child.handle = forks[static_cast<std::size_t>(k - 1)];
      child.next_position = lane.next_position;  // siblings share the start position
      if (child.label.empty()) child.label = parent_prefix + std::to_string(k) + ":";

      const CompiledLane* cl = child.script;
      int path_src = cl ? cl->path_open_source : -1;
      int label_src = cl ? cl->label_source : -1;
      child.inject.push_back(
          ScriptItem{backend_.tokenizer ? backend_.tokenizer->tag_token(TagKind::PathOpen)
                                        : tag_only_token(TagKind::PathOpen),
                     path_src});
      child.inject.push_back(ScriptItem{label_token(child.label), label_src});
      record.children.push_back(child_id);
    }
    record.conclusion_source = compiled ? compiled->conclusion_source : -1;

    lane.spawn_records.push_back(std::move(record));
    lane.waiting_on = lane.spawn_records.size() - 1;
    lane.state = LaneRuntime::State::Waiting;
    log_event(SimEvent{step_, req.id, lane.id, EventKind::Spawn, "", -1,
                       static_cast<std::size_t>(count)});
  }

  static Token tag_only_token(TagKind kind) {
    Token t;
    t.text = std::string(grammar::tag_literal(kind));
    t.id = static_cast<int>(kind);
    t.is_tag = true;
    t.tag = kind;
    return t;
  }

  Token label_token(const std::string& text) {
    if (backend_.tokenizer) return backend_.tokenizer->text_token(text);
    Token t;
    t.text = text;
    t.id = -1;
    return t;
  }

  void enter_zombie(RequestRuntime& req, LaneRuntime& lane, WorkerTermination why) {
    lane.state = LaneRuntime::State::Zombie;
    lane.terminated_by = why;
    log_event(SimEvent{step_, req.id, lane.id, EventKind::ZombieEnter, "", -1, 0});
  }

  void finish_lane(RequestRuntime& req, LaneRuntime& lane) {
    if (lane.parent < 0) {
      lane.state = LaneRuntime::State::Done;
      if (lane.frames.empty()) {
        req.done = true;
        log_event(SimEvent{step_, req.id, lane.id, EventKind::Done, "", -1, 0});
      } else {
        fail(req, FailureKind::GrammarViolationDuringDecode,
             "stream ended inside an open block");
      }
    } else {
      // A worker script always ends in </Path>, which zombies it first; a
      // lane getting here ran out unexpectedly.
      fail(req, FailureKind::GrammarViolationDuringDecode, "worker stream ended early");
    }
  }

  void maybe_merge(RequestRuntime& req, LaneRuntime& lane) {
    const auto& record = lane.spawn_records[lane.waiting_on];
    std::vector<kv::SequenceHandle> branches;
    branches.reserve(record.children.size());
    for (int child_id : record.children) {
      const LaneRuntime& child = req.lanes[static_cast<std::size_t>(child_id)];
      if (child.state != LaneRuntime::State::Zombie) return;  // still decoding
      branches.push_back(child.handle);
    }

    kv::SequenceHandle merged = req.store->merge(lane.handle, branches);
    std::size_t copied = req.store->stats().bytes_copied_on_last_op;
    max_merge_bytes_ = std::max(max_merge_bytes_, copied);
    ++merge_count_;

    req.store->release(lane.handle);
    for (int child_id : record.children) {
      LaneRuntime& child = req.lanes[static_cast<std::size_t>(child_id)];
      req.store->release(child.handle);
      child.handle = {};
      child.state = LaneRuntime::State::Done;
      lane.next_position = std::max(lane.next_position, child.next_position);
    }
    lane.handle = merged;

    // The reduce resumes with the injected <Conclusion>.
    lane.frames.back().phase = InterpFrame::Phase::AwaitConclusionTag;
    lane.inject.push_back(
        ScriptItem{backend_.tokenizer ? backend_.tokenizer->tag_token(TagKind::ConclusionOpen)
                                      : tag_only_token(TagKind::ConclusionOpen),
                   record.conclusion_source});
    lane.state = LaneRuntime::State::Active;

    log_event(SimEvent{step_, req.id, lane.id, EventKind::Merge, "", -1, merged.length});
    log_event(SimEvent{step_, req.id, lane.id, EventKind::ReduceStart, "", -1, 0});
  }

  void fail(RequestRuntime& req, FailureKind kind, const std::string& detail) {
    req.failed = true;
    req.failure = kind;
    req.failure_detail = detail;
    for (auto& lane : req.lanes) {
      if (lane.state == LaneRuntime::State::Active ||
          lane.state == LaneRuntime::State::Waiting) {
        lane.state = LaneRuntime::State::Done;
      }
    }
    log_event(SimEvent{step_, req.id, 0, EventKind::Failed, detail, -1, 0});
  }

  void log_event(SimEvent e) {
    if (options_.record_events) events_.push_back(std::move(e));
  }

  // seq(lane) = emitted + sum over its spawns of max over children.
  std::size_t critical_path(const RequestRuntime& req, int lane_id) const {
    const LaneRuntime& lane = req.lanes[static_cast<std::size_t>(lane_id)];
    std::size_t total = lane.emitted;
    for (const auto& spawn : lane.spawn_records) {
      std::size_t branch_max = 0;
      for (int child : spawn.children) {
        branch_max = std::max(branch_max, critical_path(req, child));
      }
      total += branch_max;
    }
    return total;
  }

  SimulationReport finalize() {
    SimulationReport report;
    report.wall_units = wall_;
    report.events = std::move(events_);
    report.visibility = std::move(visibility_);
    report.logits_by_source = std::move(logits_);
    report.merge_count = merge_count_;
    report.max_merge_bytes_copied = max_merge_bytes_;

    std::size_t total = 0;
    std::size_t seq = 0;
    for (const auto& req : requests_) {
      total += req.total_emitted;
      seq = std::max(seq, critical_path(req, 0));
      if (req.failed) {
        report.status = RunStatus::Failed;
        if (report.failure == FailureKind::None) {
          report.failure = req.failure;
          report.failure_detail = req.failure_detail;
        }
      }
      for (const auto& lane : req.lanes) {
        report.lanes.push_back(LaneSummary{lane.id, lane.parent, lane.ordinal, lane.emitted,
                                           lane.terminated_by});
      }
    }
    report.total_tokens = total;
    report.sequential_length = seq;
    report.parallel_degree =
        seq == 0 ? 1.0 : static_cast<double>(total) / static_cast<double>(seq);

    // Sequential baseline: the same requests decoded with no parallelism,
    // one token per request per step.
    std::size_t max_len = 0;
    for (const auto& req : requests_) max_len = std::max(max_len, req.total_emitted);
    double baseline = 0.0;
    for (std::size_t s = 1; s <= max_len; ++s) {
      std::size_t active = 0;
      for (const auto& req : requests_) {
        if (req.total_emitted >= s) ++active;
      }
      baseline += options_.cost.step_cost(active);
    }
    report.speedup_vs_sequential = wall_ > 0.0 ? baseline / wall_ : 1.0;

    if (!requests_.empty()) report.final_kv_stats = requests_[0].store->stats();

    // Store hygiene: nothing outlives the run.
    for (auto& req : requests_) {
      for (auto& lane : req.lanes) {
        if (lane.handle.valid()) {
          req.store->release(lane.handle);
          lane.handle = {};
        }
      }
    }
    return report;
  }

  RunOptions options_;
  Backend backend_;
  std::vector<RequestRuntime> requests_;
  std::vector<SimEvent> events_;
  std::vector<std::vector<int>> visibility_;
  std::vector<std::vector<double>> logits_;
  std::size_t step_ = 0;
  double wall_ = 0.0;
  std::size_t merge_count_ = 0;
  std::size_t max_merge_bytes_ = 0;
};

SimulationReport failed_report(FailureKind kind, const std::string& detail) {
  SimulationReport report;
  report.status = RunStatus::Failed;
  report.failure = kind;
  report.failure_detail = detail;
  return report;
}

}  // namespace

SimulationReport run(const ScriptedModel& model, const RunOptions& options) {
  CompiledScript script;
  try {
    script = compile_script(model.tokens());
  } catch (const CompileError& err) {
    return failed_report(FailureKind::GrammarViolationDuringDecode, err.what());
  }
  Simulator sim(options, Backend{});
  sim.add_scripted_request(script);
  return sim.run();
}

SimulationReport run_forced(const ScriptedModel& model, const toy::ToyModel& toy,
                            tok::Tokenizer& tokenizer, const RunOptions& options) {
  CompiledScript script;
  try {
    script = compile_script(model.tokens());
  } catch (const CompileError& err) {
    return failed_report(FailureKind::GrammarViolationDuringDecode, err.what());
  }
  Simulator sim(options, Backend{&toy, false, &tokenizer});
  sim.add_scripted_request(script);
  return sim.run();
}

SimulationReport run_free(const toy::ToyModel& toy, tok::Tokenizer& tokenizer,
                          std::span<const tok::Token> prompt, const RunOptions& options) {
  if (prompt.empty()) {
    return failed_report(FailureKind::GrammarViolationDuringDecode,
                         "free-running decode needs a non-empty prompt");
  }
  Simulator sim(options, Backend{&toy, true, &tokenizer});
  sim.add_free_request(prompt);
  return sim.run();
}

SimulationReport run_batch(std::span<const ScriptedModel> models, const RunOptions& options) {
  std::vector<CompiledScript> scripts;
  scripts.reserve(models.size());
  for (const auto& model : models) {
    try {
      scripts.push_back(compile_script(model.tokens()));
    } catch (const CompileError& err) {
      return failed_report(FailureKind::GrammarViolationDuringDecode, err.what());
    }
  }
  Simulator sim(options, Backend{});
  for (const auto& script : scripts) sim.add_scripted_request(script);
  return sim.run();
}

// ============================================================================
// Metrics
// ============================================================================

namespace {

struct NodeCounts {
  std::size_t total = 0;
  std::size_t critical = 0;
};

std::size_t text_tokens(const std::string& text, tok::Tokenizer& tokenizer) {
  return tokenizer.tokenize_text_run(text).size();
}

NodeCounts count_nodes(const std::vector<grammar::Node>& nodes, tok::Tokenizer& tokenizer);

NodeCounts count_block(const grammar::MapReduceBlock& block, tok::Tokenizer& tokenizer) {
  std::size_t plan = 2;  // <Parallel> <Goal>
  plan += text_tokens(block.gap_open, tokenizer);
  plan += text_tokens(block.goal_preamble, tokenizer);
  for (const auto& outline : block.outlines) {
    plan += 2 + text_tokens(outline.body, tokenizer) + text_tokens(outline.gap_after, tokenizer);
  }
  plan += 1;  // </Goal>

  std::size_t reduce = 2 + text_tokens(block.conclusion, tokenizer) +
                       text_tokens(block.gap_close, tokenizer) + 1;

  NodeCounts out;
  out.total = plan + reduce;
  std::size_t longest = 0;
  for (const auto& path : block.paths) {
    NodeCounts body = count_nodes(path.nodes, tokenizer);
    std::size_t path_total = 2 + body.total;     // <Path> body </Path>
    std::size_t path_critical = 2 + body.critical;
    out.total += path_total;
    longest = std::max(longest, path_critical);
  }
  out.critical = plan + longest + reduce;
  return out;
}

NodeCounts count_nodes(const std::vector<grammar::Node>& nodes, tok::Tokenizer& tokenizer) {
  NodeCounts out;
  for (const auto& node : nodes) {
    if (const auto* text = std::get_if<std::string>(&node)) {
      std::size_t n = text_tokens(*text, tokenizer);
      out.total += n;
      out.critical += n;
    } else {
      NodeCounts b = count_block(std::get<grammar::MapReduceBlock>(node), tokenizer);
      out.total += b.total;
      out.critical += b.critical;
    }
  }
  return out;
}

}  // namespace

ParallelismStats compute_parallelism(const grammar::Trajectory& t, tok::Tokenizer& tokenizer) {
  NodeCounts counts = count_nodes(t.nodes, tokenizer);
  ParallelismStats stats;
  stats.total_tokens = counts.total;
  stats.sequential_length = counts.critical;
  stats.degree = counts.critical == 0
                     ? 1.0
                     : static_cast<double>(counts.total) / static_cast<double>(counts.critical);
  return stats;
}

std::vector<SweepRow> sweep(const std::vector<std::pair<std::string, std::string>>& fixtures,
                            const CostModel& cost, const std::vector<int>& batches,
                            tok::TokenizerMode mode, const EngineLimits& limits) {
  std::vector<SweepRow> rows;
  for (const auto& [name, text] : fixtures) {
    tok::Tokenizer tokenizer(mode);
    grammar::Trajectory t = grammar::parse_text(text);
    ParallelismStats stats = compute_parallelism(t, tokenizer);
    ScriptedModel model = ScriptedModel::from_trajectory(t, tokenizer);
    for (int batch : batches) {
      std::vector<ScriptedModel> copies(static_cast<std::size_t>(batch), model);
      RunOptions options;
      options.cost = cost;
      options.limits = limits;
      options.record_events = false;
      SimulationReport report = run_batch(copies, options);
      SweepRow row;
      row.fixture = name;
      row.degree = stats.degree;
      row.batch = batch;
      row.latency_per_token =
          report.total_tokens == 0
              ? 0.0
              : report.wall_units * static_cast<double>(batch) /
                    static_cast<double>(report.total_tokens);
      row.speedup = report.speedup_vs_sequential;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "degree,latency_per_token,batch,speedup\n";
  for (const auto& row : rows) {
    os << row.degree << ',' << row.latency_per_token << ',' << row.batch << ','
       << row.speedup << '\n';
  }
  return os.str();
}

}  // namespace multiverse::engine
