#include "multiverse/kvcache.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace multiverse::kv {

RadixStore::RadixStore(std::size_t payload_record_size, std::size_t capacity_tokens)
    : record_size_(payload_record_size), capacity_tokens_(capacity_tokens) {
  nodes_.emplace_back();  // root sentinel: empty edge, children only
  nodes_[0].parent = -1;
}

const RadixStore::HandleRecord& RadixStore::record(const SequenceHandle& h) const {
  auto it = handles_.find(h.id);
  if (it == handles_.end()) {
    throw CacheError(CacheError::Kind::DoubleRelease,
                     "handle " + std::to_string(h.id) + " is unknown or already released");
  }
  return it->second;
}

int RadixStore::new_node(int parent) {
  nodes_.emplace_back();
  nodes_.back().parent = parent;
  return static_cast<int>(nodes_.size() - 1);
}

std::uint32_t RadixStore::alloc_slot(std::span<const std::byte> payload) {
  std::uint32_t slot;
  if (!free_slots_.empty()) {
    slot = free_slots_.back();
    free_slots_.pop_back();
  } else {
    if (slots_used_ >= capacity_tokens_) {
      throw CacheError(CacheError::Kind::CapacityExceeded,
                       "store capacity of " + std::to_string(capacity_tokens_) +
                           " tokens exceeded");
    }
    slot = static_cast<std::uint32_t>(slots_used_);
    ++slots_used_;
    slab_.resize(slots_used_ * record_size_);
  }
  if (record_size_ > 0 && !payload.empty()) {
    std::memcpy(slab_.data() + static_cast<std::size_t>(slot) * record_size_, payload.data(),
                record_size_);
  }
  return slot;
}

// Keep span lists minimal: adjacent spans on the same node coalesce.
void RadixStore::push_span(std::vector<NodeSpan>& spans, int node, std::uint32_t begin,
                           std::uint32_t count) {
  if (count == 0) return;
  if (!spans.empty() && spans.back().node == node &&
      spans.back().begin + spans.back().count == begin) {
    spans.back().count += count;
    return;
  }
  spans.push_back({node, begin, count});
}

bool RadixStore::references_node(const std::vector<NodeSpan>& spans, int id) {
  for (const auto& s : spans) {
    if (s.node == id) return true;
  }
  return false;
}

void RadixStore::add_refs(const HandleRecord& rec, int delta) {
  // Distinct nodes only; a record may hold several spans on one node.
  std::vector<int> seen;
  for (const auto& s : rec.spans) {
    if (std::find(seen.begin(), seen.end(), s.node) != seen.end()) continue;
    seen.push_back(s.node);
    node(s.node).refcount += delta;
  }
}

SequenceHandle RadixStore::register_record(HandleRecord rec) {
  SequenceHandle h;
  h.id = next_handle_++;
  h.length = rec.length;
  add_refs(rec, +1);
  handles_.emplace(h.id, std::move(rec));
  return h;
}

SequenceHandle RadixStore::create() {
  bytes_copied_last_ = 0;
  return register_record(HandleRecord{});
}

void RadixStore::split_node(int id, std::uint32_t k) {
  Node& n0 = node(id);
  if (k == 0 || k >= n0.edge.size()) return;

  int m = new_node(id);  // may reallocate nodes_; re-fetch below
  Node& parent = node(id);
  Node& child = node(m);

  child.edge.assign(parent.edge.begin() + k, parent.edge.end());
  child.slots.assign(parent.slots.begin() + k, parent.slots.end());
  child.children = std::move(parent.children);
  for (auto& [tok, cid] : child.children) node(cid).parent = m;
  parent.edge.resize(k);
  parent.slots.resize(k);
  parent.children.clear();
  parent.children.emplace(child.edge.front(), m);

  // Rewrite every live span list across the split point.
  for (auto& [hid, rec] : handles_) {
    std::vector<NodeSpan> rewritten;
    rewritten.reserve(rec.spans.size());
    for (const auto& s : rec.spans) {
      if (s.node != id) {
        push_span(rewritten, s.node, s.begin, s.count);
        continue;
      }
      std::uint32_t b = s.begin, e = s.begin + s.count;
      if (e <= k) {
        push_span(rewritten, id, b, s.count);
      } else if (b >= k) {
        push_span(rewritten, m, b - k, s.count);
      } else {
        push_span(rewritten, id, b, k - b);
        push_span(rewritten, m, 0, e - k);
      }
    }
    rec.spans = std::move(rewritten);
  }

  // Refcounts for the two affected nodes, from scratch.
  int refs_parent = 0, refs_child = 0;
  for (const auto& [hid, rec] : handles_) {
    bool on_parent = false, on_child = false;
    for (const auto& s : rec.spans) {
      on_parent |= (s.node == id);
      on_child |= (s.node == m);
    }
    refs_parent += on_parent ? 1 : 0;
    refs_child += on_child ? 1 : 0;
  }
  node(id).refcount = refs_parent;
  node(m).refcount = refs_child;
}

SequenceHandle RadixStore::extend(const SequenceHandle& h, std::span<const TokenId> tokens,
                                  std::span<const std::byte> payloads) {
  bytes_copied_last_ = 0;
  const HandleRecord& base = record(h);
  if (record_size_ > 0 && !payloads.empty() &&
      payloads.size() != tokens.size() * record_size_) {
    throw std::invalid_argument("payload byte count does not match token count");
  }

  // Register the working record up front so split rewrites cover it too.
  SequenceHandle out = register_record(base);

  auto payload_of = [&](std::size_t i) -> std::span<const std::byte> {
    if (record_size_ == 0 || payloads.empty()) return {};
    return payloads.subspan(i * record_size_, record_size_);
  };

  std::size_t i = 0;
  while (i < tokens.size()) {
    HandleRecord& rec = handles_[out.id];
    int cur;
    std::uint32_t end;
    if (rec.spans.empty()) {
      cur = 0;
      end = 0;
    } else {
      cur = rec.spans.back().node;
      end = rec.spans.back().begin + rec.spans.back().count;
    }

    if (end < node(cur).edge.size()) {
      // Re-trace the existing edge as far as it matches.
      std::uint32_t m = 0;
      while (end + m < node(cur).edge.size() && i + m < tokens.size() &&
             node(cur).edge[end + m] == tokens[i + m]) {
        ++m;
      }
      if (m > 0) {
        push_span(rec.spans, cur, end, m);
        rec.length += m;
        i += m;
        end += m;
        continue;
      }
      // Divergence inside the edge: split, then attach a fresh child below.
      split_node(cur, end);
      continue;
    }

    // end == edge size: descend into a matching child when one exists.
    auto it = node(cur).children.find(tokens[i]);
    if (it != node(cur).children.end()) {
      int child = it->second;
      std::uint32_t m = 0;
      while (m < node(child).edge.size() && i + m < tokens.size() &&
             node(child).edge[m] == tokens[i + m]) {
        ++m;
      }
      bool was_new = !references_node(rec.spans, child);
      push_span(rec.spans, child, 0, m);
      rec.length += m;
      if (was_new) node(child).refcount += 1;
      i += m;
      continue;
    }

    // Fresh suffix. Childless non-root tails grow in place; otherwise a new
    // child node hangs off the divergence point.
    std::size_t remaining = tokens.size() - i;
    int target;
    std::uint32_t begin;
    if (cur != 0 && node(cur).children.empty()) {
      target = cur;
      begin = end;
    } else {
      target = new_node(cur);
      node(cur).children.emplace(tokens[i], target);
      begin = 0;
    }
    for (std::size_t t = 0; t < remaining; ++t) {
      std::uint32_t slot = alloc_slot(payload_of(i + t));
      node(target).edge.push_back(tokens[i + t]);
      node(target).slots.push_back(slot);
    }
    HandleRecord& rec2 = handles_[out.id];  // alloc may not invalidate, but stay safe
    bool was_new = !references_node(rec2.spans, target);
    push_span(rec2.spans, target, begin, static_cast<std::uint32_t>(remaining));
    rec2.length += remaining;
    if (was_new) node(target).refcount += 1;
    i = tokens.size();
  }

  out.length = handles_[out.id].length;
  return out;
}

std::vector<SequenceHandle> RadixStore::fork(const SequenceHandle& h, int n) {
  bytes_copied_last_ = 0;
  const HandleRecord base = record(h);  // copy: registering may rehash
  std::vector<SequenceHandle> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(register_record(base));
  return out;
}

SequenceHandle RadixStore::merge(const SequenceHandle& prefix,
                                 std::span<const SequenceHandle> branches) {
  bytes_copied_last_ = 0;
  const HandleRecord prefix_rec = record(prefix);
  const auto prefix_slots = resolve_slots(prefix);

  HandleRecord merged = prefix_rec;
  for (const auto& branch : branches) {
    const HandleRecord& branch_rec = record(branch);
    if (branch_rec.length < prefix_rec.length) {
      throw CacheError(CacheError::Kind::BranchNotDescendant,
                       "branch shorter than the merge prefix");
    }
    // The branch must physically share the prefix, slot for slot.
    auto branch_slots = resolve_slots(branch);
    for (std::size_t i = 0; i < prefix_slots.size(); ++i) {
      if (branch_slots[i] != prefix_slots[i]) {
        throw CacheError(CacheError::Kind::BranchNotDescendant,
                         "branch does not share the merge prefix");
      }
    }
    // Append the suffix spans (everything past prefix length).
    std::size_t skip = prefix_rec.length;
    for (const auto& s : branch_rec.spans) {
      if (skip >= s.count) {
        skip -= s.count;
        continue;
      }
      push_span(merged.spans, s.node, s.begin + static_cast<std::uint32_t>(skip),
                s.count - static_cast<std::uint32_t>(skip));
      merged.length += s.count - skip;
      skip = 0;
    }
  }
  return register_record(std::move(merged));
}

void RadixStore::release(const SequenceHandle& h) {
  bytes_copied_last_ = 0;
  auto it = handles_.find(h.id);
  if (it == handles_.end()) {
    throw CacheError(CacheError::Kind::DoubleRelease,
                     "handle " + std::to_string(h.id) + " is unknown or already released");
  }
  HandleRecord rec = std::move(it->second);
  handles_.erase(it);
  add_refs(rec, -1);

  // Reclaim zero-ref chains; then trim unreferenced edge tails of childless
  // survivors so physical storage matches what handles can still reach.
  std::vector<int> trim_candidates;
  for (const auto& s : rec.spans) {
    if (!node(s.node).alive) continue;
    if (node(s.node).refcount == 0) {
      int parent = node(s.node).parent;
      if (parent >= 0) {
        auto& siblings = node(parent).children;
        for (auto cit = siblings.begin(); cit != siblings.end(); ++cit) {
          if (cit->second == s.node) {
            siblings.erase(cit);
            break;
          }
        }
        trim_candidates.push_back(parent);
      }
      free_subtree(s.node);
    } else {
      trim_candidates.push_back(s.node);
    }
  }

  for (int cand : trim_candidates) {
    if (cand <= 0 || !node(cand).alive || !node(cand).children.empty()) continue;
    // Max covered extent across all live handles.
    std::uint32_t covered = 0;
    for (const auto& [hid, r] : handles_) {
      for (const auto& s : r.spans) {
        if (s.node == cand) covered = std::max(covered, s.begin + s.count);
      }
    }
    while (node(cand).edge.size() > covered) {
      free_slots_.push_back(node(cand).slots.back());
      node(cand).edge.pop_back();
      node(cand).slots.pop_back();
    }
  }
}

void RadixStore::free_subtree(int id) {
  Node& n = node(id);
  if (!n.alive) return;
  for (auto& [tok, child] : n.children) free_subtree(child);
  n.children.clear();
  for (std::uint32_t slot : n.slots) free_slots_.push_back(slot);
  n.edge.clear();
  n.slots.clear();
  n.alive = false;
}

StorageStats RadixStore::stats() const {
  StorageStats s;
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    if (!nodes_[i].alive) continue;
    s.physical_tokens_stored += nodes_[i].edge.size();
    s.total_refcount += static_cast<std::size_t>(nodes_[i].refcount);
    ++s.node_count;
  }
  for (const auto& [hid, rec] : handles_) s.logical_tokens_reachable += rec.length;
  s.live_handles = handles_.size();
  s.bytes_copied_on_last_op = bytes_copied_last_;
  return s;
}

std::vector<TokenId> RadixStore::resolve(const SequenceHandle& h) const {
  const HandleRecord& rec = record(h);
  std::vector<TokenId> out;
  out.reserve(rec.length);
  for (const auto& s : rec.spans) {
    const Node& n = node(s.node);
    out.insert(out.end(), n.edge.begin() + s.begin, n.edge.begin() + s.begin + s.count);
  }
  return out;
}

std::vector<std::uint32_t> RadixStore::resolve_slots(const SequenceHandle& h) const {
  const HandleRecord& rec = record(h);
  std::vector<std::uint32_t> out;
  out.reserve(rec.length);
  for (const auto& s : rec.spans) {
    const Node& n = node(s.node);
    out.insert(out.end(), n.slots.begin() + s.begin, n.slots.begin() + s.begin + s.count);
  }
  return out;
}

std::vector<std::byte> RadixStore::resolve_payloads(const SequenceHandle& h) const {
  auto slots = resolve_slots(h);
  std::vector<std::byte> out(slots.size() * record_size_);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    std::memcpy(out.data() + i * record_size_,
                slab_.data() + static_cast<std::size_t>(slots[i]) * record_size_, record_size_);
  }
  return out;
}

void RadixStore::visit_nodes(const std::function<void(int, int, std::size_t, int)>& fn) const {
  // Depth-first, children in token order.
  std::function<void(int, int)> walk = [&](int id, int depth) {
    const Node& n = node(id);
    if (id != 0) fn(id, depth, n.edge.size(), n.refcount);
    for (const auto& [tok, child] : n.children) walk(child, depth + 1);
  };
  walk(0, -1);
}

std::string RadixStore::dump_text() const {
  std::ostringstream os;
  std::function<void(int, int)> walk = [&](int id, int depth) {
    const Node& n = node(id);
    if (id != 0) {
      for (int d = 0; d < depth; ++d) os << "  ";
      os << "node#" << id << " edge=" << n.edge.size() << " refs=" << n.refcount << " tokens=[";
      for (std::size_t i = 0; i < n.edge.size(); ++i) {
        if (i) os << ' ';
        os << n.edge[i];
      }
      os << "]\n";
    }
    for (const auto& [tok, child] : n.children) walk(child, depth + 1);
  };
  walk(0, -1);
  return os.str();
}

}  // namespace multiverse::kv
