#pragma once

/**
 * Prefix-sharing radix KV store.
 *
 * Token payloads (opaque fixed-size records; K/V vectors when the toy model
 * is attached, empty for scripted runs) live in a slab indexed by slot.
 * Tree nodes hold token-id edges plus parallel slot lists; handles are
 * registry entries resolving to ordered (node, range) spans.
 *
 * fork is O(1) per handle (span-list copy, no payload movement), node
 * splitting moves slot indices only, and merge concatenates span lists, so
 * bytes_copied_on_last_op stays 0 for every fork and merge. extend dedups
 * against existing edges, keeping one physical copy per distinct
 * (prefix, token) position.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace multiverse::kv {

using TokenId = std::int32_t;

class CacheError : public std::runtime_error {
 public:
  enum class Kind { UnknownHandle, DoubleRelease, CapacityExceeded, BranchNotDescendant };

  CacheError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct StorageStats {
  std::size_t physical_tokens_stored = 0;
  std::size_t logical_tokens_reachable = 0;
  std::size_t bytes_copied_on_last_op = 0;  // payload bytes duplicated/moved
  std::size_t live_handles = 0;
  std::size_t node_count = 0;      // root excluded
  std::size_t total_refcount = 0;  // sum over nodes
};

/// Value handle; the store owns the span list it resolves through.
struct SequenceHandle {
  std::uint64_t id = 0;
  std::size_t length = 0;

  bool valid() const { return id != 0; }
};

class RadixStore {
 public:
  explicit RadixStore(std::size_t payload_record_size = 0,
                      std::size_t capacity_tokens = 1u << 20);

  std::size_t record_size() const { return record_size_; }

  /// Fresh zero-length sequence.
  SequenceHandle create();

  /// New handle covering h's tokens followed by `tokens`; h stays live.
  /// `payloads` must hold tokens.size() * record_size() bytes (or be empty
  /// when the store is payload-free). Tokens that re-trace an existing edge
  /// are shared, not re-stored.
  SequenceHandle extend(const SequenceHandle& h, std::span<const TokenId> tokens,
                        std::span<const std::byte> payloads = {});

  /// n handles each resolving to h's tokens; payload bytes copied: 0.
  std::vector<SequenceHandle> fork(const SequenceHandle& h, int n);

  /// prefix tokens ++ each branch's suffix beyond the prefix, in order.
  /// Pure index concatenation; payload bytes copied: 0.
  SequenceHandle merge(const SequenceHandle& prefix,
                       std::span<const SequenceHandle> branches);

  /// Drops the handle; zero-ref chains are reclaimed. Throws on double
  /// release.
  void release(const SequenceHandle& h);

  StorageStats stats() const;

  std::vector<TokenId> resolve(const SequenceHandle& h) const;
  /// length * record_size() bytes, in sequence order.
  std::vector<std::byte> resolve_payloads(const SequenceHandle& h) const;
  /// Slot id per token; slot identity proves physical sharing in tests.
  std::vector<std::uint32_t> resolve_slots(const SequenceHandle& h) const;

  /// Indented tree dump: "node#i edge=3 refs=2 tokens=[...]".
  std::string dump_text() const;

  /// Walk callback: (node id, depth, edge token count, refcount).
  void visit_nodes(const std::function<void(int, int, std::size_t, int)>& fn) const;

 private:
  struct Node {
    std::vector<TokenId> edge;
    std::vector<std::uint32_t> slots;  // parallel to edge
    std::map<TokenId, int> children;   // ordered for deterministic dumps
    int parent = -1;
    int refcount = 0;
    bool alive = true;
  };

  struct NodeSpan {
    int node = 0;
    std::uint32_t begin = 0;
    std::uint32_t count = 0;
  };

  struct HandleRecord {
    std::vector<NodeSpan> spans;
    std::size_t length = 0;
  };

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  const HandleRecord& record(const SequenceHandle& h) const;

  static void push_span(std::vector<NodeSpan>& spans, int node, std::uint32_t begin,
                        std::uint32_t count);
  static bool references_node(const std::vector<NodeSpan>& spans, int id);

  int new_node(int parent);
  std::uint32_t alloc_slot(std::span<const std::byte> payload);
  void free_subtree(int id);

  /// Splits `id` at edge offset `k` (0 < k < edge size); rewrites every live
  /// handle's spans and recomputes the two refcounts.
  void split_node(int id, std::uint32_t k);

  SequenceHandle register_record(HandleRecord rec);
  void add_refs(const HandleRecord& rec, int delta);

  std::size_t record_size_;
  std::size_t capacity_tokens_;
  std::vector<Node> nodes_;  // index 0 is the root sentinel
  std::vector<std::byte> slab_;
  std::vector<std::uint32_t> free_slots_;
  std::size_t slots_used_ = 0;

  std::unordered_map<std::uint64_t, HandleRecord> handles_;
  std::uint64_t next_handle_ = 1;
  std::size_t bytes_copied_last_ = 0;
};

}  // namespace multiverse::kv
