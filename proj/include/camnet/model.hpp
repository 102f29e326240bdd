#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "camnet/autodiff.hpp"
#include "camnet/checkpoint.hpp"
#include "camnet/errors.hpp"
#include "camnet/graphs.hpp"
#include "camnet/metrics.hpp"
#include "camnet/rng.hpp"
#include "camnet/scenario.hpp"

namespace camnet::model {

using ad::Tensor;

inline constexpr int kFeatureDim = 4;     // (dx, dy, vx, vy), rotated frame
inline constexpr double kSigmaFloor = 1e-4;
inline constexpr double kLeakySlope = 0.2;

struct ModelConfig {
  int d_hidden = 64;
  int d_latent = 16;
  int heads = 4;
  int n_blocks_enc = 2;
  int n_blocks_dec = 2;
  int n_blocks_prior = 1;
  GraphConfig graph;
  double beta_start = 0.0;
  double beta_end = 1.0;
  int beta_warm_epochs = 15;
  int t_obs = kObsSteps;
  int t_pred = kFutureSteps;
  bool concat_residual = false;

  void validate() const {
    if (d_hidden < 1 || d_latent < 1 || heads < 1)
      throw_error(ErrorKind::Config, "model config: dims and heads must be positive");
    if (d_hidden % heads != 0)
      throw_error(ErrorKind::Config, "model config: heads must divide d_hidden");
    if (n_blocks_enc < 1 || n_blocks_dec < 1 || n_blocks_prior < 1)
      throw_error(ErrorKind::Config, "model config: block counts must be positive");
    if (t_obs < 1 || t_pred < 1 || t_obs + t_pred != kScenarioSteps)
      throw_error(ErrorKind::Config, "model config: t_obs + t_pred must cover the scenario");
    if (beta_warm_epochs < 0)
      throw_error(ErrorKind::Config, "model config: beta_warm_epochs must be >= 0");
  }

  double beta_at(int epoch) const {
    if (beta_warm_epochs == 0 || epoch >= beta_warm_epochs) return beta_end;
    if (epoch <= 0) return beta_start;
    return beta_start + (beta_end - beta_start) * (double)epoch / (double)beta_warm_epochs;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"d_hidden", d_hidden},
                          {"d_latent", d_latent},
                          {"heads", heads},
                          {"n_blocks_enc", n_blocks_enc},
                          {"n_blocks_dec", n_blocks_dec},
                          {"n_blocks_prior", n_blocks_prior},
                          {"graph", graph_config_name(graph)},
                          {"beta_start", beta_start},
                          {"beta_end", beta_end},
                          {"beta_warm_epochs", beta_warm_epochs},
                          {"t_obs", t_obs},
                          {"t_pred", t_pred},
                          {"concat_residual", concat_residual}};
  }

  // Missing keys fall back to the defaults above, so a config file only
  // needs the fields it overrides.
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
      cfg.d_hidden = j.value("d_hidden", cfg.d_hidden);
      cfg.d_latent = j.value("d_latent", cfg.d_latent);
      cfg.heads = j.value("heads", cfg.heads);
      cfg.n_blocks_enc = j.value("n_blocks_enc", cfg.n_blocks_enc);
      cfg.n_blocks_dec = j.value("n_blocks_dec", cfg.n_blocks_dec);
      cfg.n_blocks_prior = j.value("n_blocks_prior", cfg.n_blocks_prior);
      cfg.graph = parse_graph_config(j.value("graph", graph_config_name(cfg.graph)));
      cfg.beta_start = j.value("beta_start", cfg.beta_start);
      cfg.beta_end = j.value("beta_end", cfg.beta_end);
      cfg.beta_warm_epochs = j.value("beta_warm_epochs", cfg.beta_warm_epochs);
      cfg.t_obs = j.value("t_obs", cfg.t_obs);
      cfg.t_pred = j.value("t_pred", cfg.t_pred);
      cfg.concat_residual = j.value("concat_residual", cfg.concat_residual);
    } catch (const nlohmann::json::exception& e) {
      throw_error(ErrorKind::Config, std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }
};

struct Linear {
  Tensor w, b;
};

inline Tensor apply(const Linear& l, const Tensor& x) {
  return ad::add(ad::matmul(x, l.w), l.b);
}

struct GatHead {
  Tensor w_src, w_dst;  // [in, head_dim]
  Tensor b_att;         // [head_dim]
  Tensor a;             // [head_dim, 1]
};

struct GatBlock {
  int in_dim = 0, out_dim = 0;
  bool concat_residual = false;
  std::vector<GatHead> heads;
  Linear proj;     // residual projection in -> out
  Linear cat;      // (2 out) -> out, concat-residual variant only
  Tensor ln_g, ln_b;
};

struct GaussianHead {
  std::vector<GatBlock> blocks;
  Linear mu, sigma;  // zero-initialized
};

struct GruCell {
  Tensor w_r, u_r, b_r;
  Tensor w_u, u_u, b_u;
  Tensor w_c, u_c, b_c;
};

// batched diagonal Gaussians, one row per agent
struct Gaussians {
  Tensor mu;
  Tensor sigma;
};

struct ModelState {
  ModelConfig config;
  Linear phi_x;  // feature embedding, kFeatureDim -> d_hidden
  Linear phi_z;  // latent embedding, d_latent -> d_hidden
  GruCell gru;   // input 2 d_hidden, state d_hidden
  GaussianHead prior, enc, dec;

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto lin = [&](const std::string& name, const Linear& l) {
      out.emplace_back(name + ".w", l.w);
      out.emplace_back(name + ".b", l.b);
    };
    lin("phi_x", phi_x);
    lin("phi_z", phi_z);
    out.emplace_back("gru.w_r", gru.w_r);
    out.emplace_back("gru.u_r", gru.u_r);
    out.emplace_back("gru.b_r", gru.b_r);
    out.emplace_back("gru.w_u", gru.w_u);
    out.emplace_back("gru.u_u", gru.u_u);
    out.emplace_back("gru.b_u", gru.b_u);
    out.emplace_back("gru.w_c", gru.w_c);
    out.emplace_back("gru.u_c", gru.u_c);
    out.emplace_back("gru.b_c", gru.b_c);
    auto gnn = [&](const std::string& name, const GaussianHead& g) {
      for (size_t b = 0; b < g.blocks.size(); ++b) {
        std::string bn = name + ".b" + std::to_string(b);
        const GatBlock& blk = g.blocks[b];
        for (size_t h = 0; h < blk.heads.size(); ++h) {
          std::string hn = bn + ".h" + std::to_string(h);
          out.emplace_back(hn + ".w_src", blk.heads[h].w_src);
          out.emplace_back(hn + ".w_dst", blk.heads[h].w_dst);
          out.emplace_back(hn + ".b_att", blk.heads[h].b_att);
          out.emplace_back(hn + ".a", blk.heads[h].a);
        }
        lin(bn + ".proj", blk.proj);
        if (blk.concat_residual) lin(bn + ".cat", blk.cat);
        out.emplace_back(bn + ".ln_g", blk.ln_g);
        out.emplace_back(bn + ".ln_b", blk.ln_b);
      }
      lin(name + ".mu", g.mu);
      lin(name + ".sigma", g.sigma);
    };
    gnn("prior", prior);
    gnn("enc", enc);
    gnn("dec", dec);
    return out;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }
};

namespace detail {

inline Linear init_linear(int in, int out, Rng& rng, bool zero = false) {
  Linear l;
  l.w = zero ? ad::zero_param({in, out}) : ad::uniform_param({in, out}, rng);
  l.b = ad::zero_param({out});
  return l;
}

inline GatBlock init_block(int in, int out, int heads, bool concat_residual, Rng& rng) {
  GatBlock blk;
  blk.in_dim = in;
  blk.out_dim = out;
  blk.concat_residual = concat_residual;
  int hd = out / heads;
  for (int h = 0; h < heads; ++h) {
    GatHead head;
    head.w_src = ad::uniform_param({in, hd}, rng);
    head.w_dst = ad::uniform_param({in, hd}, rng);
    head.b_att = ad::zero_param({hd});
    head.a = ad::uniform_param({hd, 1}, rng);
    blk.heads.push_back(std::move(head));
  }
  blk.proj = init_linear(in, out, rng);
  if (concat_residual) blk.cat = init_linear(2 * out, out, rng);
  blk.ln_g = ad::Tensor::param({out}, std::vector<double>(out, 1.0));
  blk.ln_b = ad::zero_param({out});
  return blk;
}

inline GaussianHead init_gnn(int in, int hidden, int out, int n_blocks, int heads,
                             bool concat_residual, Rng& rng) {
  GaussianHead g;
  for (int b = 0; b < n_blocks; ++b)
    g.blocks.push_back(init_block(b == 0 ? in : hidden, hidden, heads, concat_residual, rng));
  g.mu = init_linear(hidden, out, rng, /*zero=*/true);
  g.sigma = init_linear(hidden, out, rng, /*zero=*/true);
  return g;
}

}  // namespace detail

inline ModelState init_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(mix_seed(seed, fnv1a("model_init")));
  ModelState m;
  m.config = config;
  int d = config.d_hidden, L = config.d_latent;
  m.phi_x = detail::init_linear(kFeatureDim, d, rng);
  m.phi_z = detail::init_linear(L, d, rng);
  m.gru.w_r = ad::uniform_param({2 * d, d}, rng);
  m.gru.u_r = ad::uniform_param({d, d}, rng);
  m.gru.b_r = ad::zero_param({d});
  m.gru.w_u = ad::uniform_param({2 * d, d}, rng);
  m.gru.u_u = ad::uniform_param({d, d}, rng);
  m.gru.b_u = ad::zero_param({d});
  m.gru.w_c = ad::uniform_param({2 * d, d}, rng);
  m.gru.u_c = ad::uniform_param({d, d}, rng);
  m.gru.b_c = ad::zero_param({d});
  m.prior = detail::init_gnn(d, d, L, config.n_blocks_prior, config.heads,
                             config.concat_residual, rng);
  m.enc = detail::init_gnn(2 * d, d, L, config.n_blocks_enc, config.heads,
                           config.concat_residual, rng);
  m.dec = detail::init_gnn(2 * d, d, kFeatureDim, config.n_blocks_dec, config.heads,
                           config.concat_residual, rng);
  return m;
}

// One GATv2 block: per head, attention logits a^T leaky_relu(W_src x_j +
// W_dst x_i + b) over each destination's in-edges, segment softmax, weighted
// sum of transformed source features; heads concatenated, ELU, residual
// projection of the block input, layer norm.
inline Tensor gat_block_forward(const GatBlock& blk, const Tensor& x, const Adjacency& adj) {
  if (x.shape().size() != 2 || x.shape()[1] != blk.in_dim)
    throw_error(ErrorKind::ShapeMismatch, "gat block: feature dim mismatch");
  if (x.shape()[0] != adj.n)
    throw_error(ErrorKind::ShapeMismatch, "gat block: node count mismatch");
  std::vector<int> src, dst;
  src.reserve(adj.edges.size());
  dst.reserve(adj.edges.size());
  for (auto& [s, d] : adj.edges) {
    src.push_back(s);
    dst.push_back(d);
  }
  std::vector<Tensor> head_outs;
  for (const GatHead& head : blk.heads) {
    Tensor s_src = ad::matmul(x, head.w_src);
    Tensor s_dst = ad::matmul(x, head.w_dst);
    Tensor e_src = ad::gather_rows(s_src, src);
    Tensor e_dst = ad::gather_rows(s_dst, dst);
    Tensor scores = ad::leaky_relu(ad::add(ad::add(e_src, e_dst), head.b_att), kLeakySlope);
    Tensor logits = ad::matmul(scores, head.a);
    Tensor alpha = ad::segment_softmax(logits, dst, adj.n);
    Tensor weighted = ad::rowwise_scale(e_src, alpha);
    head_outs.push_back(ad::scatter_add_rows(weighted, dst, adj.n));
  }
  Tensor gat = head_outs.size() == 1 ? head_outs[0] : ad::concat(head_outs, 1);
  Tensor res = apply(blk.proj, x);
  Tensor combined;
  if (blk.concat_residual)
    combined = apply(blk.cat, ad::concat({ad::elu(gat), res}, 1));
  else
    combined = ad::add(ad::elu(gat), res);
  return ad::layer_norm(combined, blk.ln_g, blk.ln_b);
}

inline Gaussians gaussian_head_forward(const GaussianHead& g, Tensor x, const Adjacency& adj) {
  for (const GatBlock& blk : g.blocks) x = gat_block_forward(blk, x, adj);
  Gaussians out;
  out.mu = apply(g.mu, x);
  out.sigma = ad::clamp_min(ad::softplus(apply(g.sigma, x)), kSigmaFloor);
  return out;
}

inline Gaussians prior_step(const ModelState& m, const Tensor& h_prev, const Adjacency& adj) {
  return gaussian_head_forward(m.prior, h_prev, adj);
}

inline Gaussians encoder_step(const ModelState& m, const Tensor& x_feats, const Tensor& h_prev,
                              const Adjacency& adj) {
  Tensor embedded = apply(m.phi_x, x_feats);
  return gaussian_head_forward(m.enc, ad::concat({embedded, h_prev}, 1), adj);
}

inline Gaussians decoder_step(const ModelState& m, const Tensor& z, const Tensor& h_prev,
                              const Adjacency& adj) {
  Tensor embedded = apply(m.phi_z, z);
  return gaussian_head_forward(m.dec, ad::concat({embedded, h_prev}, 1), adj);
}

// Per-agent gated recurrence on concat(phi_x(x), phi_z(z)); no cross-agent
// mixing happens here.
inline Tensor rnn_step(const ModelState& m, const Tensor& x_feats, const Tensor& z,
                       const Tensor& h_prev) {
  Tensor in = ad::concat({apply(m.phi_x, x_feats), apply(m.phi_z, z)}, 1);
  Tensor r = ad::sigmoid(ad::add(ad::add(ad::matmul(in, m.gru.w_r), ad::matmul(h_prev, m.gru.u_r)),
                                 m.gru.b_r));
  Tensor u = ad::sigmoid(ad::add(ad::add(ad::matmul(in, m.gru.w_u), ad::matmul(h_prev, m.gru.u_u)),
                                 m.gru.b_u));
  Tensor c = ad::tanh(ad::add(
      ad::add(ad::matmul(in, m.gru.w_c), ad::matmul(ad::mul(r, h_prev), m.gru.u_c)), m.gru.b_c));
  // (1-u) h + u c, written as h + u (c - h)
  return ad::add(h_prev, ad::mul(u, ad::sub(c, h_prev)));
}

// elementwise KL(q || p) for diagonal Gaussians: log(sp/sq) + (sq^2 +
// (mq-mp)^2) / (2 sp^2) - 1/2
inline Tensor kl_elements(const Gaussians& q, const Gaussians& p) {
  if (q.mu.shape() != p.mu.shape() || q.sigma.shape() != p.sigma.shape() ||
      q.mu.shape() != q.sigma.shape())
    throw_error(ErrorKind::ShapeMismatch, "kl_diag: distribution shapes differ");
  Tensor log_ratio = ad::sub(ad::log(p.sigma), ad::log(q.sigma));
  Tensor dmu = ad::sub(q.mu, p.mu);
  Tensor num = ad::add(ad::mul(q.sigma, q.sigma), ad::mul(dmu, dmu));
  Tensor den = ad::scale(ad::mul(p.sigma, p.sigma), 2.0);
  return ad::add_const(ad::add(log_ratio, ad::div(num, den)), -0.5);
}

inline Tensor kl_diag(const Gaussians& q, const Gaussians& p) {
  return ad::sum(kl_elements(q, p));
}

// ---- scenario featurization -----------------------------------------------

// Model-frame features: per-step displacement and velocity, rotated so the
// focal agent's last observed heading points along +x.
struct ScenarioFeatures {
  int n_agents = 0;
  double cos_r = 1.0, sin_r = 0.0;  // scenario -> model frame rotation
  std::vector<int64_t> station_ids;
  // index [t * n_agents + i]
  std::vector<std::array<double, kFeatureDim>> feats;
  std::vector<bool> valid;
  std::vector<std::pair<double, double>> positions;

  bool is_valid(int t, int i) const { return valid[(size_t)t * n_agents + i]; }
  const std::array<double, kFeatureDim>& feat(int t, int i) const {
    return feats[(size_t)t * n_agents + i];
  }
};

inline ScenarioFeatures featurize(const Scenario& scenario, int t_obs) {
  const AgentTrack* focal = scenario.focal_agent();
  if (!focal) throw_error(ErrorKind::MalformedFile, "scenario has no focal agent");
  double heading = focal->states[(size_t)t_obs - 1].heading;
  ScenarioFeatures f;
  f.n_agents = (int)scenario.agents.size();
  f.cos_r = std::cos(heading);
  f.sin_r = std::sin(heading);
  f.feats.resize((size_t)kScenarioSteps * f.n_agents);
  f.valid.resize((size_t)kScenarioSteps * f.n_agents);
  f.positions.resize((size_t)kScenarioSteps * f.n_agents);
  for (const AgentTrack& a : scenario.agents) f.station_ids.push_back(a.station_id);
  auto rot = [&](double x, double y) {
    return std::pair<double, double>{f.cos_r * x + f.sin_r * y, -f.sin_r * x + f.cos_r * y};
  };
  for (int i = 0; i < f.n_agents; ++i) {
    const AgentTrack& a = scenario.agents[i];
    for (int t = 0; t < kScenarioSteps; ++t) {
      size_t idx = (size_t)t * f.n_agents + i;
      f.valid[idx] = a.valid[t];
      f.positions[idx] = {a.states[t].x, a.states[t].y};
      if (!a.valid[t]) continue;
      double dx = 0.0, dy = 0.0;
      if (t > 0 && a.valid[t - 1]) {
        dx = a.states[t].x - a.states[t - 1].x;
        dy = a.states[t].y - a.states[t - 1].y;
      }
      auto [rdx, rdy] = rot(dx, dy);
      auto [rvx, rvy] = rot(a.states[t].vx, a.states[t].vy);
      f.feats[idx] = {rdx, rdy, rvx, rvy};
    }
  }
  return f;
}

namespace detail {

inline Tensor noise_rows(uint64_t seed, const std::vector<int64_t>& station_ids, int t, int dim) {
  int n = (int)station_ids.size();
  std::vector<double> data((size_t)n * dim);
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(mix_seed(seed, (uint64_t)station_ids[i]), (uint64_t)t));
    for (int j = 0; j < dim; ++j) data[(size_t)i * dim + j] = rng.normal();
  }
  return Tensor::constant({n, dim}, std::move(data));
}

inline Tensor step_features(const ScenarioFeatures& f, int t) {
  int n = f.n_agents;
  std::vector<double> data((size_t)n * kFeatureDim, 0.0);
  for (int i = 0; i < n; ++i)
    if (f.is_valid(t, i))
      for (int j = 0; j < kFeatureDim; ++j) data[(size_t)i * kFeatureDim + j] = f.feat(t, i)[j];
  return Tensor::constant({n, kFeatureDim}, std::move(data));
}

inline std::vector<bool> step_valid(const ScenarioFeatures& f, int t) {
  std::vector<bool> v(f.n_agents);
  for (int i = 0; i < f.n_agents; ++i) v[i] = f.is_valid(t, i);
  return v;
}

inline std::vector<std::pair<double, double>> step_positions(const ScenarioFeatures& f, int t) {
  std::vector<std::pair<double, double>> p(f.n_agents);
  for (int i = 0; i < f.n_agents; ++i) p[i] = f.positions[(size_t)t * f.n_agents + i];
  return p;
}

// h' = mask h_new + (1-mask) h_prev, rowwise
inline Tensor blend_hidden(const Tensor& h_new, const Tensor& h_prev,
                           const std::vector<bool>& valid) {
  bool all = true, none = true;
  for (bool v : valid) {
    if (v)
      none = false;
    else
      all = false;
  }
  if (all) return h_new;
  if (none) return h_prev;
  int n = (int)valid.size();
  std::vector<double> mask(n), inv(n);
  for (int i = 0; i < n; ++i) {
    mask[i] = valid[i] ? 1.0 : 0.0;
    inv[i] = valid[i] ? 0.0 : 1.0;
  }
  return ad::add(ad::rowwise_scale(h_new, Tensor::constant({n}, mask)),
                 ad::rowwise_scale(h_prev, Tensor::constant({n}, inv)));
}

// per-element Gaussian log density log N(x | mu, sigma)
inline Tensor gaussian_log_density(const Tensor& x, const Gaussians& g) {
  Tensor diff = ad::sub(x, g.mu);
  Tensor quad = ad::div(ad::mul(diff, diff), ad::scale(ad::mul(g.sigma, g.sigma), 2.0));
  constexpr double kHalfLog2Pi = 0.9189385332046727;  // log(2 pi) / 2
  return ad::add_const(ad::neg(ad::add(ad::log(g.sigma), quad)), -kHalfLog2Pi);
}

inline Tensor mask_rows(const Tensor& x, const std::vector<bool>& valid) {
  bool all = true;
  for (bool v : valid) all = all && v;
  if (all) return x;
  int n = (int)valid.size();
  std::vector<double> mask(n);
  for (int i = 0; i < n; ++i) mask[i] = valid[i] ? 1.0 : 0.0;
  return ad::rowwise_scale(x, Tensor::constant({n}, mask));
}

}  // namespace detail

// ---- training objective ------------------------------------------------------

struct ElboResult {
  Tensor loss;       // scalar, on tape
  double recon_ll = 0.0;  // per valid agent-step
  double kl = 0.0;        // per valid agent-step
  size_t valid_agent_steps = 0;
};

// Teacher-forced beta-ELBO over the first n_steps of the scenario with one
// reparameterized latent sample per step. Sums run over valid agent-steps
// and are normalized by their count; diagnostics use the same normalization.
inline ElboResult elbo(const Scenario& scenario, const ModelState& m, double beta,
                       uint64_t noise_seed, int n_steps = kScenarioSteps) {
  const ModelConfig& cfg = m.config;
  if (n_steps < 1 || n_steps > kScenarioSteps)
    throw_error(ErrorKind::Config, "elbo: n_steps out of range");
  ScenarioFeatures f = featurize(scenario, cfg.t_obs);
  int n = f.n_agents;

  size_t count = 0;
  for (int t = 0; t < n_steps; ++t)
    for (int i = 0; i < n; ++i)
      if (f.is_valid(t, i)) ++count;
  if (count == 0) throw_error(ErrorKind::NoValidSteps, "elbo: no valid agent-steps");

  Tensor h = Tensor::zeros({n, cfg.d_hidden});
  Tensor recon_sum = Tensor::scalar(0.0);
  Tensor kl_sum = Tensor::scalar(0.0);
  for (int t = 0; t < n_steps; ++t) {
    std::vector<bool> valid = detail::step_valid(f, t);
    if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; })) continue;
    Adjacency adj = build_adjacency(cfg.graph, detail::step_positions(f, t), valid);
    Tensor x_t = detail::step_features(f, t);

    Gaussians prior_g = prior_step(m, h, adj);
    Gaussians enc_g = encoder_step(m, x_t, h, adj);
    Tensor eps = detail::noise_rows(noise_seed, f.station_ids, t, cfg.d_latent);
    Tensor z = ad::add(enc_g.mu, ad::mul(enc_g.sigma, eps));
    Gaussians dec_g = decoder_step(m, z, h, adj);

    recon_sum = ad::add(recon_sum,
                        ad::sum(detail::mask_rows(detail::gaussian_log_density(x_t, dec_g), valid)));
    kl_sum = ad::add(kl_sum, ad::sum(detail::mask_rows(kl_elements(enc_g, prior_g), valid)));

    Tensor h_new = rnn_step(m, x_t, z, h);
    h = detail::blend_hidden(h_new, h, valid);
  }

  double inv_count = 1.0 / (double)count;
  ElboResult out;
  out.loss = ad::scale(ad::sub(ad::scale(kl_sum, beta), recon_sum), inv_count);
  out.recon_ll = recon_sum.item() * inv_count;
  out.kl = kl_sum.item() * inv_count;
  out.valid_agent_steps = count;
  return out;
}

// ---- sampling --------------------------------------------------------------

struct AgentForecast {
  int64_t station_id = 0;
  int agent_index = 0;
  std::vector<Trajectory> modes;  // k trajectories of t_pred absolute positions
};

// Teacher-forced pass over the observation window (posterior mean latents),
// then k free-running rollouts: z ~ prior, decode the mean, feed it back.
// Rollout r uses latent noise keyed by (seed, station_id, t, r), so results
// are deterministic and permutation-independent. noise_scale multiplies the
// prior std; 0 collapses every rollout onto the prior mean.
inline std::vector<AgentForecast> sample_trajectories(const Scenario& scenario,
                                                      const ModelState& m, int k,
                                                      uint64_t seed,
                                                      double noise_scale = 1.0) {
  const ModelConfig& cfg = m.config;
  if (k < 1) throw_error(ErrorKind::Config, "sample_trajectories: k must be >= 1");
  ScenarioFeatures f = featurize(scenario, cfg.t_obs);
  int n = f.n_agents;

  Tensor h = Tensor::zeros({n, cfg.d_hidden});
  for (int t = 0; t < cfg.t_obs; ++t) {
    std::vector<bool> valid = detail::step_valid(f, t);
    if (std::none_of(valid.begin(), valid.end(), [](bool v) { return v; })) continue;
    Adjacency adj = build_adjacency(cfg.graph, detail::step_positions(f, t), valid);
    Tensor x_t = detail::step_features(f, t);
    Gaussians enc_g = encoder_step(m, x_t, h, adj);
    Tensor h_new = rnn_step(m, x_t, enc_g.mu, h);
    h = detail::blend_hidden(h_new, h, valid);
  }

  std::vector<bool> pred_valid = detail::step_valid(f, cfg.t_obs - 1);
  std::vector<AgentForecast> out;
  for (int i = 0; i < n; ++i)
    if (pred_valid[i]) out.push_back({f.station_ids[i], i, {}});
  if (out.empty()) return out;

  for (int r = 0; r < k; ++r) {
    Tensor h_r = h;
    auto positions = detail::step_positions(f, cfg.t_obs - 1);
    std::vector<Trajectory> tracks(n);
    for (int t = cfg.t_obs; t < cfg.t_obs + cfg.t_pred; ++t) {
      Adjacency adj = build_adjacency(cfg.graph, positions, pred_valid);
      Gaussians prior_g = prior_step(m, h_r, adj);
      Tensor eps = detail::noise_rows(mix_seed(seed, (uint64_t)r), f.station_ids, t,
                                      cfg.d_latent);
      Tensor z = ad::add(prior_g.mu, ad::scale(ad::mul(prior_g.sigma, eps), noise_scale));
      Gaussians dec_g = decoder_step(m, z, h_r, adj);
      const std::vector<double>& feat = dec_g.mu.value();
      for (int i = 0; i < n; ++i) {
        if (!pred_valid[i]) continue;
        double dx = feat[(size_t)i * kFeatureDim];
        double dy = feat[(size_t)i * kFeatureDim + 1];
        // rotate the predicted displacement back into the scenario frame
        positions[i].first += f.cos_r * dx - f.sin_r * dy;
        positions[i].second += f.sin_r * dx + f.cos_r * dy;
        tracks[i].push_back({positions[i].first, positions[i].second});
      }
      Tensor h_new = rnn_step(m, dec_g.mu, z, h_r);
      h_r = detail::blend_hidden(h_new, h_r, pred_valid);
    }
    for (AgentForecast& af : out) af.modes.push_back(std::move(tracks[af.agent_index]));
  }
  return out;
}

// ---- checkpoint bridge ------------------------------------------------------

inline void save_model(const std::filesystem::path& path, const ModelState& m, int epoch) {
  auto named = m.named_params();
  ad::save_checkpoint(path, ad::entries_from_params(named));
  nlohmann::json side{{"config", m.config.to_json()}, {"epoch", epoch}};
  std::filesystem::path side_path = path;
  side_path += ".json";
  std::ofstream out(side_path);
  if (!out) throw_error(ErrorKind::Io, "cannot write sidecar: " + side_path.string());
  out << side.dump(2) << "\n";
}

inline ModelState load_model(const std::filesystem::path& path, int* epoch_out = nullptr) {
  std::filesystem::path side_path = path;
  side_path += ".json";
  std::ifstream in(side_path);
  if (!in) throw_error(ErrorKind::Io, "cannot read sidecar: " + side_path.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw_error(ErrorKind::MalformedFile, "sidecar parse error: " + std::string(e.what()));
  }
  ModelConfig cfg = ModelConfig::from_json(side.at("config"));
  if (epoch_out) *epoch_out = side.value("epoch", 0);
  ModelState m = init_model(cfg, 0);
  auto named = m.named_params();
  ad::load_into_params(ad::load_checkpoint(path), named);
  return m;
}

}  // namespace camnet::model
