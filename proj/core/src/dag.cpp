#include "multiverse/dag.hpp"

#include <algorithm>
#include <stdexcept>

namespace multiverse::dag {

using grammar::MapReduceBlock;
using grammar::Node;
using grammar::TagKind;
using grammar::Trajectory;
using tok::Token;
using tok::Tokenizer;

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::Sequential: return "sequential";
    case SegmentKind::Plan: return "plan";
    case SegmentKind::Path: return "path";
    case SegmentKind::Reduce: return "reduce";
  }
  return "?";
}

std::size_t GenerationDag::total_tokens() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.size();
  return n;
}

std::vector<std::pair<int, int>> GenerationDag::token_layout() const {
  std::vector<std::pair<int, int>> rows;
  rows.reserve(total_tokens());
  for (int sid : layout) {
    const Segment& s = segments[static_cast<std::size_t>(sid)];
    for (int off = 0; off < static_cast<int>(s.size()); ++off) rows.emplace_back(sid, off);
  }
  return rows;
}

std::vector<Token> GenerationDag::layout_tokens() const {
  std::vector<Token> out;
  out.reserve(total_tokens());
  for (int sid : layout) {
    const Segment& s = segments[static_cast<std::size_t>(sid)];
    out.insert(out.end(), s.tokens.begin(), s.tokens.end());
  }
  return out;
}

int GenerationDag::row_of(int segment_id, int offset) const {
  int row = 0;
  for (int sid : layout) {
    const Segment& s = segments[static_cast<std::size_t>(sid)];
    if (sid == segment_id) {
      if (offset >= static_cast<int>(s.size())) return -1;
      return row + offset;
    }
    row += static_cast<int>(s.size());
  }
  return -1;
}

namespace {

class DagBuilder {
 public:
  explicit DagBuilder(Tokenizer& tokenizer) : tok_(tokenizer) {}

  GenerationDag build(const Trajectory& t) {
    visit_nodes(t.nodes);
    dag_.layout.resize(dag_.segments.size());
    for (std::size_t i = 0; i < dag_.segments.size(); ++i) dag_.layout[i] = static_cast<int>(i);
    return std::move(dag_);
  }

 private:
  int new_segment(SegmentKind kind, std::vector<int> parents) {
    Segment s;
    s.id = static_cast<int>(dag_.segments.size());
    s.kind = kind;
    s.parents = std::move(parents);
    dag_.segments.push_back(std::move(s));
    return dag_.segments.back().id;
  }

  Segment& seg(int id) { return dag_.segments[static_cast<std::size_t>(id)]; }

  std::vector<int> chain_parent() const {
    return chain_tail_ < 0 ? std::vector<int>{} : std::vector<int>{chain_tail_};
  }

  void append_tokens(const std::vector<Token>& tokens) {
    if (tokens.empty()) return;
    if (open_seq_ < 0) {
      open_seq_ = new_segment(SegmentKind::Sequential, chain_parent());
      chain_tail_ = open_seq_;
    }
    auto& dst = seg(open_seq_).tokens;
    dst.insert(dst.end(), tokens.begin(), tokens.end());
  }

  void append_text(std::string_view text) { append_tokens(tok_.tokenize_text_run(text)); }

  void append_tag(TagKind kind) { append_tokens({tok_.tag_token(kind)}); }

  void visit_nodes(const std::vector<Node>& nodes) {
    for (const auto& node : nodes) {
      if (const auto* text = std::get_if<std::string>(&node)) {
        append_text(*text);
      } else {
        visit_block(std::get<MapReduceBlock>(node));
      }
    }
  }

  void visit_block(const MapReduceBlock& block) {
    int block_index = static_cast<int>(dag_.blocks.size());
    dag_.blocks.emplace_back();
    dag_.blocks[static_cast<std::size_t>(block_index)].parent_block = enclosing_block_;
    int saved_enclosing = enclosing_block_;
    enclosing_block_ = block_index;

    // Plan covers <Parallel> .. </Goal>.
    std::vector<Token> plan_tokens;
    auto add = [&](std::vector<Token> ts) {
      plan_tokens.insert(plan_tokens.end(), ts.begin(), ts.end());
    };
    add({tok_.tag_token(TagKind::ParallelOpen)});
    add(tok_.tokenize_text_run(block.gap_open));
    add({tok_.tag_token(TagKind::GoalOpen)});
    add(tok_.tokenize_text_run(block.goal_preamble));
    for (const auto& outline : block.outlines) {
      add({tok_.tag_token(TagKind::OutlineOpen)});
      add(tok_.tokenize_text_run(outline.body));
      add({tok_.tag_token(TagKind::OutlineClose)});
      add(tok_.tokenize_text_run(outline.gap_after));
    }
    add({tok_.tag_token(TagKind::GoalClose)});

    int plan = new_segment(SegmentKind::Plan, chain_parent());
    seg(plan).kind = SegmentKind::Plan;
    seg(plan).block = block_index;
    seg(plan).tokens = std::move(plan_tokens);
    open_seq_ = -1;

    auto& info = dag_.blocks[static_cast<std::size_t>(block_index)];
    info.plan_segment = plan;

    for (std::size_t k = 0; k < block.paths.size(); ++k) {
      int subtree_begin = static_cast<int>(dag_.segments.size());
      int head = new_segment(SegmentKind::Path, {plan});
      seg(head).block = block_index;
      seg(head).path_ordinal = static_cast<int>(k) + 1;
      chain_tail_ = head;
      open_seq_ = head;  // path body starts inside the head segment
      seg(head).tokens.push_back(tok_.tag_token(TagKind::PathOpen));
      visit_nodes(block.paths[k].nodes);
      append_tag(TagKind::PathClose);
      info.path_heads.push_back(head);
      info.path_tails.push_back(chain_tail_);
      info.path_subtrees.emplace_back(subtree_begin, static_cast<int>(dag_.segments.size()));
      open_seq_ = -1;
    }

    std::vector<Token> reduce_tokens;
    reduce_tokens.push_back(tok_.tag_token(TagKind::ConclusionOpen));
    {
      auto body = tok_.tokenize_text_run(block.conclusion);
      reduce_tokens.insert(reduce_tokens.end(), body.begin(), body.end());
    }
    reduce_tokens.push_back(tok_.tag_token(TagKind::ConclusionClose));
    {
      auto gap = tok_.tokenize_text_run(block.gap_close);
      reduce_tokens.insert(reduce_tokens.end(), gap.begin(), gap.end());
    }
    reduce_tokens.push_back(tok_.tag_token(TagKind::ParallelClose));

    int reduce = new_segment(SegmentKind::Reduce, info.path_tails);
    seg(reduce).block = block_index;
    seg(reduce).tokens = std::move(reduce_tokens);

    info.reduce_segment = reduce;
    chain_tail_ = reduce;
    open_seq_ = -1;
    enclosing_block_ = saved_enclosing;
  }

  Tokenizer& tok_;
  GenerationDag dag_;
  int chain_tail_ = -1;
  int open_seq_ = -1;
  int enclosing_block_ = -1;
};

}  // namespace

GenerationDag build_dag(const Trajectory& t, Tokenizer& tokenizer) {
  DagBuilder builder(tokenizer);
  return builder.build(t);
}

std::vector<int> assign_positions(GenerationDag& dag) {
  // Creation order is topological: every parent id is smaller than its
  // children's ids.
  for (auto& s : dag.segments) {
    int start = 0;
    for (int p : s.parents) {
      start = std::max(start, dag.segments[static_cast<std::size_t>(p)].end_pos() + 1);
    }
    s.start_pos = start;
  }
  std::vector<int> positions;
  positions.reserve(dag.total_tokens());
  for (int sid : dag.layout) {
    const Segment& s = dag.segments[static_cast<std::size_t>(sid)];
    for (int off = 0; off < static_cast<int>(s.size()); ++off) {
      positions.push_back(s.start_pos + off);
    }
  }
  return positions;
}

namespace {

// Per-segment visible-ancestor sets as bit words.
std::vector<std::vector<std::uint64_t>> visibility_sets(const GenerationDag& dag) {
  std::size_t n = dag.segments.size();
  std::size_t words = (n + 63) / 64;
  std::vector<std::vector<std::uint64_t>> vis(n, std::vector<std::uint64_t>(words, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (int p : dag.segments[i].parents) {
      const auto& pv = vis[static_cast<std::size_t>(p)];
      for (std::size_t w = 0; w < words; ++w) vis[i][w] |= pv[w];
    }
    vis[i][i / 64] |= (std::uint64_t{1} << (i % 64));
  }
  return vis;
}

}  // namespace

Mask build_mask(const GenerationDag& dag) {
  auto rows = dag.token_layout();
  auto vis = visibility_sets(dag);
  Mask mask(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [si, oi] = rows[i];
    const auto& visible = vis[static_cast<std::size_t>(si)];
    for (std::size_t j = 0; j < rows.size(); ++j) {
      auto [sj, oj] = rows[j];
      if (si == sj) {
        mask.set(i, j, oj <= oi);
      } else {
        bool seg_visible =
            (visible[static_cast<std::size_t>(sj) / 64] >> (static_cast<std::size_t>(sj) % 64)) &
            1;
        mask.set(i, j, seg_visible);
      }
    }
  }
  return mask;
}

VisibilitySpec build_visibility(GenerationDag& dag) {
  VisibilitySpec spec;
  spec.positions = assign_positions(dag);
  spec.mask = build_mask(dag);
  return spec;
}

GenerationDag permute_paths(const GenerationDag& dag, int block_index,
                            const std::vector<int>& perm) {
  const BlockInfo& info = dag.blocks.at(static_cast<std::size_t>(block_index));
  if (perm.size() != info.path_subtrees.size()) {
    throw std::invalid_argument("permutation size does not match path count");
  }

  // Collect the layout slots occupied by each path subtree, in layout order.
  auto in_subtree = [&](int sid, int path) {
    auto [b, e] = info.path_subtrees[static_cast<std::size_t>(path)];
    return sid >= b && sid < e;
  };

  std::vector<int> region_slots;  // indices into dag.layout covering all subtrees
  std::vector<std::vector<int>> per_path(info.path_subtrees.size());
  for (std::size_t slot = 0; slot < dag.layout.size(); ++slot) {
    int sid = dag.layout[slot];
    for (std::size_t p = 0; p < info.path_subtrees.size(); ++p) {
      if (in_subtree(sid, static_cast<int>(p))) {
        region_slots.push_back(static_cast<int>(slot));
        per_path[p].push_back(sid);
        break;
      }
    }
  }

  GenerationDag out = dag;
  std::size_t cursor = 0;
  for (int new_slot : perm) {
    for (int sid : per_path[static_cast<std::size_t>(new_slot)]) {
      out.layout[static_cast<std::size_t>(region_slots[cursor++])] = sid;
    }
  }
  return out;
}

TrainingBatch build_training_batch(const Trajectory& t, Tokenizer& tokenizer,
                                   const BatchOptions& options) {
  GenerationDag dag = build_dag(t, tokenizer);
  return build_training_batch(dag, options);
}

TrainingBatch build_training_batch(GenerationDag& dag, const BatchOptions& options) {
  TrainingBatch batch;
  batch.positions = assign_positions(dag);
  batch.mask = build_mask(dag);

  auto rows = dag.token_layout();
  batch.token_ids.reserve(rows.size());
  for (auto [sid, off] : rows) {
    batch.token_ids.push_back(
        dag.segments[static_cast<std::size_t>(sid)].tokens[static_cast<std::size_t>(off)].id);
  }

  // Unique chain successor: the one segment having exactly {s} as parents.
  std::vector<int> successor(dag.segments.size(), -1);
  for (const auto& s : dag.segments) {
    if (s.parents.size() == 1) {
      int p = s.parents[0];
      const auto& parent = dag.segments[static_cast<std::size_t>(p)];
      if (parent.kind == SegmentKind::Plan) continue;  // handled below
      successor[static_cast<std::size_t>(p)] = s.id;
    }
  }
  for (const auto& info : dag.blocks) {
    successor[static_cast<std::size_t>(info.plan_segment)] = info.path_heads.front();
  }

  batch.target_ids.assign(rows.size(), -1);
  batch.loss_mask.assign(rows.size(), 0);
  std::size_t row = 0;
  for (int sid : dag.layout) {
    const Segment& s = dag.segments[static_cast<std::size_t>(sid)];
    for (std::size_t off = 0; off < s.size(); ++off, ++row) {
      const Token* target = nullptr;
      if (off + 1 < s.size()) {
        target = &s.tokens[off + 1];
      } else if (successor[static_cast<std::size_t>(sid)] >= 0) {
        const Segment& next = dag.segments[static_cast<std::size_t>(successor[sid])];
        if (!next.tokens.empty()) target = &next.tokens.front();
      }
      if (!target) continue;
      batch.target_ids[row] = target->id;
      batch.loss_mask[row] = (options.tag_loss || !target->is_tag) ? 1 : 0;
    }
  }
  return batch;
}

std::string mask_grid(const Mask& mask) {
  std::string out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    for (std::size_t j = 0; j < mask.size(); ++j) {
      out += mask.at(i, j) ? '#' : '.';
    }
    out += '\n';
  }
  return out;
}

}  // namespace multiverse::dag
