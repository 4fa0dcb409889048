#include "multiverse/toy_model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "multiverse/synth.hpp"

namespace multiverse::toy {

namespace {

void fill_uniform(std::vector<double>& v, std::size_t n, synth::Rng& rng, double range) {
  v.resize(n);
  for (auto& x : v) x = rng.next_symmetric(range);
}

// y = W x with W row-major (rows x cols), x of size cols.
void matvec(const std::vector<double>& w, std::span<const double> x, std::span<double> y,
            int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = w.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    for (int c = 0; c < cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = acc;
  }
}

// In-place rotary rotation of one head slice at `position`.
void rotate(std::span<double> head, int position, double base) {
  int dh = static_cast<int>(head.size());
  for (int t = 0; t * 2 < dh; ++t) {
    double theta = static_cast<double>(position) *
                   std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(dh));
    double c = std::cos(theta), s = std::sin(theta);
    double a = head[static_cast<std::size_t>(2 * t)];
    double b = head[static_cast<std::size_t>(2 * t + 1)];
    head[static_cast<std::size_t>(2 * t)] = a * c - b * s;
    head[static_cast<std::size_t>(2 * t + 1)] = a * s + b * c;
  }
}

}  // namespace

ToyModelWeights ToyModelWeights::init(const ToyModelConfig& config) {
  if (config.layers < 1 || config.heads < 1 || config.model_dim < 1 || config.vocab_size < 1) {
    throw std::invalid_argument("toy model dims must be >= 1");
  }
  if (config.model_dim % config.heads != 0 || config.head_dim() % 2 != 0) {
    throw std::invalid_argument("model_dim must split into even-sized heads");
  }
  ToyModelWeights w;
  w.config = config;
  synth::Rng rng(config.seed);
  std::size_t d = static_cast<std::size_t>(config.model_dim);
  std::size_t hidden = static_cast<std::size_t>(config.hidden_dim());
  std::size_t vocab = static_cast<std::size_t>(config.vocab_size);

  fill_uniform(w.embedding, vocab * d, rng, config.init_range);
  w.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& layer : w.layers) {
    fill_uniform(layer.wq, d * d, rng, config.init_range);
    fill_uniform(layer.wk, d * d, rng, config.init_range);
    fill_uniform(layer.wv, d * d, rng, config.init_range);
    fill_uniform(layer.wo, d * d, rng, config.init_range);
    fill_uniform(layer.w_up, hidden * d, rng, config.init_range);
    fill_uniform(layer.w_down, d * hidden, rng, config.init_range);
  }
  fill_uniform(w.unembed, vocab * d, rng, config.init_range);
  return w;
}

std::span<const double> ForwardResult::logits_row(std::size_t i) const {
  std::size_t vocab = logits.size() / rows;
  return {logits.data() + i * vocab, vocab};
}

std::span<const double> ForwardResult::hidden_row(std::size_t i) const {
  std::size_t d = hidden.size() / rows;
  return {hidden.data() + i * d, d};
}

StepOutput ToyModel::step(std::span<const double> context_kv, std::size_t ctx_len, int token_id,
                          int position) const {
  const ToyModelConfig& cfg = weights_.config;
  const std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
  const int heads = cfg.heads;
  const std::size_t rec = static_cast<std::size_t>(cfg.kv_doubles_per_token());
  if (context_kv.size() < ctx_len * rec) {
    throw std::invalid_argument("context kv shorter than ctx_len records");
  }

  StepOutput out;
  out.kv.resize(rec);

  int id = token_id % cfg.vocab_size;
  if (id < 0) id += cfg.vocab_size;
  std::vector<double> x(weights_.embedding.begin() + static_cast<std::size_t>(id) * d,
                        weights_.embedding.begin() + (static_cast<std::size_t>(id) + 1) * d);

  std::vector<double> q(d), k(d), v(d), attn(d), proj(d);
  std::vector<double> up(static_cast<std::size_t>(cfg.hidden_dim()));
  std::vector<double> scores(ctx_len + 1);

  for (int l = 0; l < cfg.layers; ++l) {
    const auto& layer = weights_.layers[static_cast<std::size_t>(l)];
    matvec(layer.wq, x, q, cfg.model_dim, cfg.model_dim);
    matvec(layer.wk, x, k, cfg.model_dim, cfg.model_dim);
    matvec(layer.wv, x, v, cfg.model_dim, cfg.model_dim);
    for (int h = 0; h < heads; ++h) {
      rotate({q.data() + static_cast<std::size_t>(h) * dh, dh}, position, cfg.rope_base);
      rotate({k.data() + static_cast<std::size_t>(h) * dh, dh}, position, cfg.rope_base);
    }

    // Cache this token's post-rotation K and pre-projection V.
    const std::size_t layer_off = static_cast<std::size_t>(l) * 2 * d;
    std::copy(k.begin(), k.end(), out.kv.begin() + static_cast<std::ptrdiff_t>(layer_off));
    std::copy(v.begin(), v.end(), out.kv.begin() + static_cast<std::ptrdiff_t>(layer_off + d));

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
      const std::size_t ho = static_cast<std::size_t>(h) * dh;
      // Scores over cached context (layout order), self last.
      double max_score = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < ctx_len; ++j) {
        const double* ctx_k = context_kv.data() + j * rec + layer_off;
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += q[ho + t] * ctx_k[ho + t];
        s *= scale;
        scores[j] = s;
        if (s > max_score) max_score = s;
      }
      {
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += q[ho + t] * k[ho + t];
        s *= scale;
        scores[ctx_len] = s;
        if (s > max_score) max_score = s;
      }

      double denom = 0.0;
      for (std::size_t j = 0; j <= ctx_len; ++j) {
        scores[j] = std::exp(scores[j] - max_score);
        denom += scores[j];
      }

      for (std::size_t t = 0; t < dh; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < ctx_len; ++j) {
          const double* ctx_v = context_kv.data() + j * rec + layer_off + d;
          acc += scores[j] * ctx_v[ho + t];
        }
        acc += scores[ctx_len] * v[ho + t];
        attn[ho + t] = acc / denom;
      }
    }

    matvec(layer.wo, attn, proj, cfg.model_dim, cfg.model_dim);
    for (std::size_t t = 0; t < d; ++t) x[t] += proj[t];

    matvec(layer.w_up, x, up, cfg.hidden_dim(), cfg.model_dim);
    for (auto& u : up) u = std::tanh(u);
    matvec(layer.w_down, up, proj, cfg.model_dim, cfg.hidden_dim());
    for (std::size_t t = 0; t < d; ++t) x[t] += proj[t];
  }

  out.logits.resize(static_cast<std::size_t>(cfg.vocab_size));
  matvec(weights_.unembed, x, out.logits, cfg.vocab_size, cfg.model_dim);
  out.hidden = std::move(x);
  return out;
}

ForwardResult ToyModel::forward(const dag::TrainingBatch& batch) const {
  const ToyModelConfig& cfg = weights_.config;
  const std::size_t n = batch.size();
  if (batch.mask.size() != n || batch.positions.size() != n) {
    throw std::invalid_argument("batch mask/positions do not match token count");
  }

  ForwardResult result;
  result.rows = n;
  result.logits.reserve(n * static_cast<std::size_t>(cfg.vocab_size));
  result.hidden.reserve(n * static_cast<std::size_t>(cfg.model_dim));

  std::vector<std::vector<double>> kv_rows(n);
  std::vector<double> ctx;
  for (std::size_t i = 0; i < n; ++i) {
    ctx.clear();
    std::size_t ctx_len = 0;
    for (std::size_t j = 0; j < i; ++j) {
      if (!batch.mask.at(i, j)) continue;
      ctx.insert(ctx.end(), kv_rows[j].begin(), kv_rows[j].end());
      ++ctx_len;
    }
    StepOutput step_out = step(ctx, ctx_len, batch.token_ids[i], batch.positions[i]);
    kv_rows[i] = std::move(step_out.kv);
    result.logits.insert(result.logits.end(), step_out.logits.begin(), step_out.logits.end());
    result.hidden.insert(result.hidden.end(), step_out.hidden.begin(), step_out.hidden.end());
  }
  return result;
}

double ToyModel::loss(const dag::TrainingBatch& batch) const {
  ForwardResult fwd = forward(batch);
  const std::size_t vocab = static_cast<std::size_t>(weights_.config.vocab_size);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.target_ids[i] < 0 || !batch.loss_mask[i]) continue;
    auto row = fwd.logits_row(i);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (double z : row) max_logit = std::max(max_logit, z);
    double denom = 0.0;
    for (double z : row) denom += std::exp(z - max_logit);
    std::size_t target = static_cast<std::size_t>(batch.target_ids[i]) % vocab;
    total += -(row[target] - max_logit - std::log(denom));
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace multiverse::toy
