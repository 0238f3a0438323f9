#include "civdg/models.hpp"

#include <cmath>

#include "civdg/rng.hpp"

namespace civdg {
namespace {

constexpr std::uint64_t kInitTag = 0x494E4954ULL;

void fill_uniform_fanin(DenseArray& w, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < w.size(); ++i)
    w[i] = rng.uniform(-limit, limit);
}

void fill_embedding(DenseArray& w, Rng& rng) {
  for (std::int64_t i = 0; i < w.size(); ++i)
    w[i] = 0.02 * rng.next_gaussian();
}

void fill_unit_gaussian(DenseArray& u, Rng& rng) {
  double norm = 0.0;
  for (std::int64_t i = 0; i < u.size(); ++i) {
    u[i] = rng.next_gaussian();
    norm += u[i] * u[i];
  }
  norm = std::sqrt(norm);
  if (norm < 1e-12) {
    u.fill(0.0);
    u[0] = 1.0;
    return;
  }
  for (std::int64_t i = 0; i < u.size(); ++i) u[i] /= norm;
}

void check_ids(const std::vector<int>& ids, int upper, const char* what) {
  for (int v : ids) {
    if (v < 0 || v >= upper)
      throw ValidationError(std::string(what) + " id " + std::to_string(v) +
                            " out of range [0, " + std::to_string(upper) +
                            ")");
  }
}

DenseArray gather_rows(const DenseArray& table, const std::vector<int>& ids) {
  const auto n = static_cast<std::int64_t>(ids.size());
  DenseArray out({n, table.cols()});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* src = table.row_ptr(ids[static_cast<std::size_t>(i)]);
    std::copy(src, src + table.cols(), out.row_ptr(i));
  }
  return out;
}

void scatter_rows_add(DenseArray& table_grad, const std::vector<int>& ids,
                      const DenseArray& g, std::int64_t col_offset) {
  for (std::int64_t i = 0; i < g.rows(); ++i) {
    double* dst = table_grad.row_ptr(ids[static_cast<std::size_t>(i)]);
    const double* src = g.row_ptr(i) + col_offset;
    for (std::int64_t j = 0; j < table_grad.cols(); ++j) dst[j] += src[j];
  }
}

}  // namespace

void validate(const PredictorSpec& spec) {
  if (spec.feature_dim < 1 || spec.n_strata < 1)
    throw ValidationError("PredictorSpec: dimensions must be >= 1");
  if (spec.hidden_dims.empty())
    throw ValidationError("PredictorSpec: hidden_dims must be nonempty");
  for (int h : spec.hidden_dims)
    if (h < 1) throw ValidationError("PredictorSpec: hidden dim < 1");
  if (spec.multi_label ? spec.n_classes < 1 : spec.n_classes < 2)
    throw ValidationError("PredictorSpec: too few classes for task mode");
  if (spec.use_demographics && spec.d_embed_dim < 1)
    throw ValidationError("PredictorSpec: d_embed_dim must be >= 1");
  // slope 1 turns the activation into the identity (linear adapter)
  if (!(spec.leaky_slope > 0.0 && spec.leaky_slope <= 1.0))
    throw ValidationError("PredictorSpec: leaky_slope must lie in (0,1]");
  if (spec.frozen_projection_dim < 0)
    throw ValidationError("PredictorSpec: negative projection dim");
}

void validate(const CriticSpec& spec) {
  if (spec.n_sites < 1 || spec.n_strata < 1 || spec.z_embed_dim < 1 ||
      spec.d_embed_dim < 1 || spec.hidden_dim < 1)
    throw ValidationError("CriticSpec: dimensions must be >= 1");
  if (spec.output_dim < 1)
    throw ValidationError("CriticSpec: output_dim must be >= 1");
  if (spec.n_layers < 1)
    throw ValidationError("CriticSpec: n_layers must be >= 1");
  if (!(spec.leaky_slope > 0.0 && spec.leaky_slope < 1.0))
    throw ValidationError("CriticSpec: leaky_slope must lie in (0,1)");
}

ParameterStore init_predictor_params(const PredictorSpec& spec,
                                     std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, kInitTag));
  ParameterStore store;

  std::int64_t x_dim = spec.feature_dim;
  if (spec.frozen_projection_dim > 0) {
    auto& e = store.add("frozen/proj",
                        DenseArray({spec.frozen_projection_dim,
                                    spec.feature_dim}));
    e.trainable = false;
    for (std::int64_t i = 0; i < e.value.size(); ++i)
      e.value[i] =
          rng.next_gaussian() / std::sqrt(static_cast<double>(spec.feature_dim));
    x_dim = spec.frozen_projection_dim;
  }
  if (spec.use_demographics) {
    auto& e = store.add("embed/d",
                        DenseArray({spec.n_strata, spec.d_embed_dim}));
    fill_embedding(e.value, rng);
  }

  std::int64_t in_dim =
      x_dim + (spec.use_demographics ? spec.d_embed_dim : 0);
  for (std::size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::int64_t out_dim = spec.hidden_dims[i];
    auto& w = store.add("adapter/w" + std::to_string(i),
                        DenseArray({out_dim, in_dim}));
    fill_uniform_fanin(w.value, in_dim, rng);
    store.add("adapter/b" + std::to_string(i), DenseArray({out_dim}));
    in_dim = out_dim;
  }
  auto& head = store.add("head/w", DenseArray({spec.n_classes, in_dim}));
  fill_uniform_fanin(head.value, in_dim, rng);
  store.add("head/b", DenseArray({spec.n_classes}));
  return store;
}

ParameterStore init_critic_params(const CriticSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng(derive_seed(seed, kInitTag));
  ParameterStore store;

  auto& ez = store.add("embed/z",
                       DenseArray({spec.n_sites, spec.z_embed_dim}));
  fill_embedding(ez.value, rng);
  auto& ed = store.add("embed/d",
                       DenseArray({spec.n_strata, spec.d_embed_dim}));
  fill_embedding(ed.value, rng);

  std::int64_t in_dim = spec.z_embed_dim + spec.d_embed_dim;
  for (int i = 0; i < spec.n_layers; ++i) {
    const std::int64_t out_dim =
        (i == spec.n_layers - 1) ? spec.output_dim : spec.hidden_dim;
    auto& w = store.add("mlp/w" + std::to_string(i),
                        DenseArray({out_dim, in_dim}), true);
    fill_uniform_fanin(w.value, in_dim, rng);
    fill_unit_gaussian(*w.sn_u, rng);
    store.add("mlp/b" + std::to_string(i), DenseArray({out_dim}));
    in_dim = out_dim;
  }
  return store;
}

DenseArray probs_from_logits(const DenseArray& logits, bool multi_label) {
  DenseArray probs(logits.shape());
  if (multi_label) {
    for (std::int64_t i = 0; i < logits.size(); ++i)
      probs[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    return probs;
  }
  for (std::int64_t i = 0; i < logits.rows(); ++i) {
    const double* s = logits.row_ptr(i);
    double mx = s[0];
    for (std::int64_t c = 1; c < logits.cols(); ++c) mx = std::max(mx, s[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < logits.cols(); ++c)
      denom += std::exp(s[c] - mx);
    double* p = probs.row_ptr(i);
    for (std::int64_t c = 0; c < logits.cols(); ++c)
      p[c] = std::exp(s[c] - mx) / denom;
  }
  return probs;
}

Predictor::Predictor(PredictorSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)), params_(init_predictor_params(spec_, seed)) {}

DenseArray Predictor::forward(const DenseArray& x, const std::vector<int>& d,
                              Cache* cache) const {
  if (x.ndim() != 2 || x.cols() != spec_.feature_dim)
    throw DimensionError("Predictor::forward: x must be [B x " +
                         std::to_string(spec_.feature_dim) + "], got " +
                         x.shape_str());
  const std::int64_t batch = x.rows();

  DenseArray feat;
  if (spec_.frozen_projection_dim > 0) {
    const DenseArray& proj = params_.at("frozen/proj").value;
    feat = affine_forward(x, proj, DenseArray({proj.rows()}));
  } else {
    feat = x;
  }

  DenseArray input;
  if (spec_.use_demographics) {
    if (static_cast<std::int64_t>(d.size()) != batch)
      throw DimensionError("Predictor::forward: d length mismatch");
    check_ids(d, spec_.n_strata, "stratum");
    const DenseArray emb = gather_rows(params_.at("embed/d").value, d);
    input = DenseArray({batch, feat.cols() + emb.cols()});
    for (std::int64_t i = 0; i < batch; ++i) {
      std::copy(feat.row_ptr(i), feat.row_ptr(i) + feat.cols(),
                input.row_ptr(i));
      std::copy(emb.row_ptr(i), emb.row_ptr(i) + emb.cols(),
                input.row_ptr(i) + feat.cols());
    }
  } else {
    input = std::move(feat);
  }

  if (cache != nullptr) {
    cache->input = input;
    cache->d = d;
    cache->pre.clear();
    cache->post.clear();
  }

  DenseArray h = std::move(input);
  for (std::size_t i = 0; i < spec_.hidden_dims.size(); ++i) {
    const std::string tag = std::to_string(i);
    DenseArray pre = affine_forward(h, params_.at("adapter/w" + tag).value,
                                    params_.at("adapter/b" + tag).value);
    DenseArray post = leaky_relu(pre, spec_.leaky_slope);
    if (cache != nullptr) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
    }
    h = std::move(post);
  }
  return affine_forward(h, params_.at("head/w").value,
                        params_.at("head/b").value);
}

void Predictor::backward(const Cache& cache, const DenseArray& g_logits) {
  const std::size_t n_hidden = spec_.hidden_dims.size();
  if (cache.pre.size() != n_hidden)
    throw StateError("Predictor::backward: cache does not match spec");

  const DenseArray& last =
      n_hidden > 0 ? cache.post.back() : cache.input;
  auto& head_w = params_.at("head/w");
  auto& head_b = params_.at("head/b");
  DenseArray g_prev({last.rows(), last.cols()});
  affine_backward(last, head_w.value, g_logits, &g_prev, &head_w.grad,
                  &head_b.grad);
  head_w.grad_set = true;
  head_b.grad_set = true;

  for (std::size_t i = n_hidden; i-- > 0;) {
    const std::string tag = std::to_string(i);
    const DenseArray& layer_in = i == 0 ? cache.input : cache.post[i - 1];
    DenseArray g_pre =
        leaky_relu_backward(cache.pre[i], g_prev, spec_.leaky_slope);
    auto& w = params_.at("adapter/w" + tag);
    auto& b = params_.at("adapter/b" + tag);
    DenseArray g_in({layer_in.rows(), layer_in.cols()});
    affine_backward(layer_in, w.value, g_pre, &g_in, &w.grad, &b.grad);
    w.grad_set = true;
    b.grad_set = true;
    g_prev = std::move(g_in);
  }

  if (spec_.use_demographics) {
    auto& emb = params_.at("embed/d");
    const std::int64_t x_cols = cache.input.cols() - spec_.d_embed_dim;
    scatter_rows_add(emb.grad, cache.d, g_prev, x_cols);
    emb.grad_set = true;
  }
}

Critic::Critic(CriticSpec spec, std::uint64_t seed)
    : spec_(spec), params_(init_critic_params(spec_, seed)) {}

DenseArray Critic::forward(const std::vector<int>& z,
                           const std::vector<int>& d, bool training,
                           Cache* cache) {
  if (z.size() != d.size())
    throw DimensionError("Critic::forward: z/d length mismatch");
  if (z.empty()) throw ValidationError("Critic::forward: empty batch");
  check_ids(z, spec_.n_sites, "site");
  check_ids(d, spec_.n_strata, "stratum");

  const auto batch = static_cast<std::int64_t>(z.size());
  const DenseArray ez = gather_rows(params_.at("embed/z").value, z);
  const DenseArray ed = gather_rows(params_.at("embed/d").value, d);
  DenseArray input({batch, ez.cols() + ed.cols()});
  for (std::int64_t i = 0; i < batch; ++i) {
    std::copy(ez.row_ptr(i), ez.row_ptr(i) + ez.cols(), input.row_ptr(i));
    std::copy(ed.row_ptr(i), ed.row_ptr(i) + ed.cols(),
              input.row_ptr(i) + ez.cols());
  }

  if (cache != nullptr) {
    cache->input = input;
    cache->z = z;
    cache->d = d;
    cache->pre.clear();
    cache->post.clear();
    cache->sn.clear();
    cache->u_prev.clear();
  }

  DenseArray h = std::move(input);
  for (int i = 0; i < spec_.n_layers; ++i) {
    const std::string tag = std::to_string(i);
    auto& w = params_.at("mlp/w" + tag);
    const DenseArray u_prev = *w.sn_u;
    SpectralNormResult sn = spectral_normalize(w.value, u_prev, 1);
    if (training) *w.sn_u = sn.u_next;

    DenseArray pre =
        affine_forward(h, sn.w_sn, params_.at("mlp/b" + tag).value);
    const bool last = i == spec_.n_layers - 1;
    DenseArray post = last ? pre : leaky_relu(pre, spec_.leaky_slope);
    if (cache != nullptr) {
      cache->pre.push_back(pre);
      cache->post.push_back(post);
      cache->sn.push_back(std::move(sn));
      cache->u_prev.push_back(u_prev);
    }
    h = std::move(post);
  }
  return h;
}

void Critic::backward(const Cache& cache, const DenseArray& g_out) {
  if (static_cast<int>(cache.sn.size()) != spec_.n_layers)
    throw StateError("Critic::backward: cache does not match spec");

  DenseArray g = g_out;
  for (int i = spec_.n_layers - 1; i >= 0; --i) {
    const std::string tag = std::to_string(i);
    if (i != spec_.n_layers - 1)
      g = leaky_relu_backward(cache.pre[static_cast<std::size_t>(i)], g,
                              spec_.leaky_slope);
    const DenseArray& layer_in =
        i == 0 ? cache.input : cache.post[static_cast<std::size_t>(i - 1)];
    auto& w = params_.at("mlp/w" + tag);
    auto& b = params_.at("mlp/b" + tag);
    DenseArray g_w_sn =
        DenseArray::zeros(w.value.shape());
    DenseArray g_in({layer_in.rows(), layer_in.cols()});
    affine_backward(layer_in, cache.sn[static_cast<std::size_t>(i)].w_sn, g,
                    &g_in, &g_w_sn, &b.grad);
    spectral_normalize_backward(w.value,
                                cache.sn[static_cast<std::size_t>(i)],
                                cache.u_prev[static_cast<std::size_t>(i)],
                                g_w_sn, &w.grad);
    w.grad_set = true;
    b.grad_set = true;
    g = std::move(g_in);
  }

  auto& ez = params_.at("embed/z");
  auto& ed = params_.at("embed/d");
  scatter_rows_add(ez.grad, cache.z, g, 0);
  scatter_rows_add(ed.grad, cache.d, g, spec_.z_embed_dim);
  ez.grad_set = true;
  ed.grad_set = true;
}

}  // namespace civdg
