#pragma once

// Independent oracles for the test suites. Nothing in here reuses the
// implementation path it is checking: the mask oracle walks segment ancestry
// per token pair, the position oracle derives positions from the mask alone,
// the critical-path oracle runs longest-path over the segment graph, the
// edit-distance oracle is the plain recursive definition, and the cache
// oracle mirrors every op on flat token vectors.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "multiverse/dag.hpp"
#include "multiverse/kvcache.hpp"
#include "multiverse/synth.hpp"

namespace oracles {

// ============================================================================
// Fixtures
// ============================================================================

inline std::string load_fixture(const std::string& name) {
  std::string path = std::string(MULTIVERSE_DATA_DIR) + "/fixtures/" + name;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing fixture: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// The worked fixture from the module walkthroughs: 28 whitespace tokens,
// a 12-token prefix+plan, paths of 5 and 6, and a 5-token reduce+tail.
inline const char* kT1 =
    "plan <Parallel> <Goal> <Outline> 1: a </Outline> <Outline> 2: b </Outline> </Goal> "
    "<Path> 1: x1 x2 </Path> <Path> 2: y1 y2 y3 </Path> "
    "<Conclusion> done </Conclusion> </Parallel> end";

// ============================================================================
// Edit distance
// ============================================================================

// Plain exponential recursion, straight from the definition.
inline std::size_t recursive_levenshtein(std::string_view a, std::string_view b) {
  if (a.empty()) return b.size();
  if (b.empty()) return a.size();
  std::size_t skip_a = recursive_levenshtein(a.substr(1), b) + 1;
  std::size_t skip_b = recursive_levenshtein(a, b.substr(1)) + 1;
  std::size_t both = recursive_levenshtein(a.substr(1), b.substr(1)) +
                     (a.front() == b.front() ? 0 : 1);
  return std::min({skip_a, skip_b, both});
}

// Same recursion with memoization, for longer sampled pairs.
inline std::size_t memo_levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::vector<std::int64_t>> memo(a.size() + 1,
                                              std::vector<std::int64_t>(b.size() + 1, -1));
  std::function<std::size_t(std::size_t, std::size_t)> rec = [&](std::size_t i,
                                                                 std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto& slot = memo[i][j];
    if (slot >= 0) return static_cast<std::size_t>(slot);
    std::size_t best = std::min({rec(i + 1, j) + 1, rec(i, j + 1) + 1,
                                 rec(i + 1, j + 1) + (a[i] == b[j] ? 0u : 1u)});
    slot = static_cast<std::int64_t>(best);
    return best;
  };
  return rec(0, 0);
}

// ============================================================================
// Mask / positions / critical path
// ============================================================================

// Is `ancestor` reachable from `seg` through visibility parents? Memoless DFS.
inline bool reaches(const multiverse::dag::GenerationDag& dag, int seg, int ancestor) {
  if (seg == ancestor) return true;
  for (int p : dag.segments[static_cast<std::size_t>(seg)].parents) {
    if (reaches(dag, p, ancestor)) return true;
  }
  return false;
}

inline multiverse::dag::Mask brute_force_mask(const multiverse::dag::GenerationDag& dag) {
  auto rows = dag.token_layout();
  multiverse::dag::Mask mask(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows.size(); ++j) {
      auto [si, oi] = rows[i];
      auto [sj, oj] = rows[j];
      bool visible = (si == sj) ? (oj <= oi) : reaches(dag, si, sj);
      mask.set(i, j, visible);
    }
  }
  return mask;
}

// Positions recovered from the mask alone: a token's position is the length
// of the longest chain of visible predecessors.
inline std::vector<int> positions_from_mask(const multiverse::dag::Mask& mask) {
  std::size_t n = mask.size();
  std::vector<int> pos(n, -1);
  // Tokens only see layout-earlier tokens, so one forward sweep settles it.
  for (std::size_t i = 0; i < n; ++i) {
    int best = -1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && mask.at(i, j)) best = std::max(best, pos[j]);
    }
    pos[i] = best + 1;
  }
  return pos;
}

// Longest token chain over the segment graph.
inline std::size_t critical_path_tokens(const multiverse::dag::GenerationDag& dag) {
  std::vector<std::size_t> lp(dag.segments.size(), 0);
  std::size_t best = 0;
  for (const auto& seg : dag.segments) {  // ids are topologically ordered
    std::size_t from_parents = 0;
    for (int p : seg.parents) from_parents = std::max(from_parents, lp[static_cast<std::size_t>(p)]);
    lp[static_cast<std::size_t>(seg.id)] = from_parents + seg.size();
    best = std::max(best, lp[static_cast<std::size_t>(seg.id)]);
  }
  return best;
}

// ============================================================================
// Flat-cache mirror
// ============================================================================

// Mirrors a RadixStore op-for-op on plain vectors keyed by handle id.
struct FlatMirror {
  std::map<std::uint64_t, std::vector<multiverse::kv::TokenId>> sequences;

  void create(const multiverse::kv::SequenceHandle& h) { sequences[h.id] = {}; }

  void extend(const multiverse::kv::SequenceHandle& from,
              const multiverse::kv::SequenceHandle& to,
              const std::vector<multiverse::kv::TokenId>& tokens) {
    auto seq = sequences.at(from.id);
    seq.insert(seq.end(), tokens.begin(), tokens.end());
    sequences[to.id] = std::move(seq);
  }

  void fork(const multiverse::kv::SequenceHandle& from,
            const std::vector<multiverse::kv::SequenceHandle>& children) {
    for (const auto& c : children) sequences[c.id] = sequences.at(from.id);
  }

  void merge(const multiverse::kv::SequenceHandle& prefix,
             const std::vector<multiverse::kv::SequenceHandle>& branches,
             const multiverse::kv::SequenceHandle& merged) {
    auto seq = sequences.at(prefix.id);
    for (const auto& b : branches) {
      const auto& bs = sequences.at(b.id);
      seq.insert(seq.end(), bs.begin() + static_cast<std::ptrdiff_t>(sequences.at(prefix.id).size()),
                 bs.end());
    }
    sequences[merged.id] = std::move(seq);
  }

  void release(const multiverse::kv::SequenceHandle& h) { sequences.erase(h.id); }

  // Ground truth for "distinct (prefix-path, token) positions still
  // referenced": every prefix of every live sequence.
  std::size_t distinct_positions() const {
    std::map<std::vector<multiverse::kv::TokenId>, bool> prefixes;
    for (const auto& [id, seq] : sequences) {
      std::vector<multiverse::kv::TokenId> p;
      for (auto t : seq) {
        p.push_back(t);
        prefixes[p] = true;
      }
    }
    return prefixes.size();
  }
};

}  // namespace oracles
