#include "multiverse/synth.hpp"

#include <array>

namespace multiverse::synth {

namespace {

constexpr std::array<const char*, 24> kWords{
    "compute", "the",    "sum",    "of",      "terms",  "case",   "value", "bound",
    "check",   "total",  "factor", "residue", "count",  "length", "area",  "digits",
    "result",  "apply",  "lemma",  "segment", "series", "root",   "prime", "ratio",
};

constexpr std::array<const char*, 4> kGaps{" ", "\n", "\n\n", " \n"};

}  // namespace

int Rng::next_int(int lo, int hi) {
  std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double Rng::next_unit() {
  // 53 mantissa bits -> [0, 1), identical on every platform.
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_symmetric(double r) { return (next_unit() * 2.0 - 1.0) * r; }

std::string word(Rng& rng) { return kWords[static_cast<std::size_t>(rng.next_int(0, 23))]; }

namespace {

std::string gap(Rng& rng) { return kGaps[static_cast<std::size_t>(rng.next_int(0, 3))]; }

std::string words(Rng& rng, int count) {
  std::string out;
  for (int i = 0; i < count; ++i) {
    if (i) out += ' ';
    out += word(rng);
  }
  return out;
}

void emit_block(Rng& rng, const TrajectoryParams& params, const std::string& label_prefix,
                int depth, std::string& out) {
  int paths = rng.next_int(1, params.max_paths);

  out += "<Parallel>";
  out += gap(rng);
  out += "<Goal>";
  out += gap(rng);
  for (int i = 1; i <= paths; ++i) {
    out += "<Outline>";
    out += gap(rng);
    out += label_prefix + std::to_string(i) + ": ";
    out += words(rng, rng.next_int(2, params.max_text_words));
    out += gap(rng);
    out += "</Outline>";
    out += gap(rng);
  }
  out += "</Goal>";
  out += gap(rng);

  for (int i = 1; i <= paths; ++i) {
    std::string label = label_prefix + std::to_string(i);
    out += "<Path>";
    out += gap(rng);
    out += label + ": ";
    out += words(rng, rng.next_int(2, params.max_text_words));
    if (depth < params.max_depth && rng.next_bool(params.nest_probability)) {
      out += gap(rng);
      emit_block(rng, params, label + ".", depth + 1, out);
      out += gap(rng);
      out += words(rng, rng.next_int(1, params.max_text_words));
    }
    out += gap(rng);
    out += "</Path>";
    out += gap(rng);
  }

  out += "<Conclusion>";
  out += gap(rng);
  out += words(rng, rng.next_int(2, params.max_text_words));
  out += gap(rng);
  out += "</Conclusion>";
  out += gap(rng);
  out += "</Parallel>";
}

}  // namespace

std::string random_trajectory(Rng& rng, const TrajectoryParams& params) {
  std::string out;
  int blocks = rng.next_int(1, params.max_blocks);
  if (params.allow_leading_text && rng.next_bool(0.8)) {
    out += words(rng, rng.next_int(1, params.max_text_words));
    out += gap(rng);
  }
  for (int b = 0; b < blocks; ++b) {
    if (b) {
      out += gap(rng);
      out += words(rng, rng.next_int(1, params.max_text_words));
      out += gap(rng);
    }
    emit_block(rng, params, "", 1, out);
  }
  if (params.allow_trailing_text && rng.next_bool(0.8)) {
    out += gap(rng);
    out += words(rng, rng.next_int(1, params.max_text_words));
  }
  return out;
}

std::string random_sequential_text(Rng& rng, int count) { return words(rng, count); }

}  // namespace multiverse::synth
