#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "camnet/errors.hpp"
#include "camnet/ingest.hpp"
#include "camnet/log.hpp"
#include "camnet/metrics.hpp"
#include "camnet/model.hpp"
#include "camnet/optim.hpp"
#include "camnet/rng.hpp"
#include "camnet/scenario.hpp"

namespace camnet::model {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 128;
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  int k_eval = 6;
  std::filesystem::path log_path;         // CSV; empty -> not written
  std::filesystem::path checkpoint_path;  // best checkpoint; empty -> not written
  std::optional<std::filesystem::path> warm_start;

  void validate() const {
    if (epochs < 1) throw_error(ErrorKind::Config, "train: epochs must be >= 1");
    if (batch_size < 1) throw_error(ErrorKind::Config, "train: batch_size must be >= 1");
    if (k_eval < 1) throw_error(ErrorKind::Config, "train: k_eval must be >= 1");
    if (lr_start <= 0 || lr_end <= 0)
      throw_error(ErrorKind::Config, "train: learning rates must be positive");
  }
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0, beta = 0.0;
  double train_loss = 0.0, recon_ll = 0.0, kl = 0.0;
  double val_avgmin1_ade = 0.0, val_avgmin6_ade = 0.0, val_avgmin6_fde = 0.0, val_mr6 = 0.0;
};

struct TrainResult {
  ModelState model;  // final-epoch weights; the best checkpoint goes to disk
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_ade = std::numeric_limits<double>::infinity();
};

// ground-truth future and k-mode forecasts for every focal agent
inline std::vector<PredictionSet> focal_predictions(const Scenario& s, const ModelState& m,
                                                    int k, uint64_t seed) {
  const ModelConfig& cfg = m.config;
  auto forecasts = sample_trajectories(s, m, k, seed);
  std::vector<PredictionSet> out;
  for (size_t i = 0; i < s.agents.size(); ++i) {
    const AgentTrack& a = s.agents[i];
    if (!a.focal) continue;
    const AgentForecast* fc = nullptr;
    for (const AgentForecast& cand : forecasts)
      if (cand.agent_index == (int)i) {
        fc = &cand;
        break;
      }
    if (!fc) {
      log::warn("scenario " + s.id + ": focal agent " + std::to_string(a.station_id) +
                " has no state at the forecast origin; skipped");
      continue;
    }
    PredictionSet p;
    p.trajectories = fc->modes;
    for (int t = cfg.t_obs; t < cfg.t_obs + cfg.t_pred; ++t) {
      p.ground_truth.push_back({a.states[t].x, a.states[t].y});
      p.valid.push_back(a.valid[t]);
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace detail {

inline void write_log_header(std::ofstream& out) {
  out << "epoch,lr,beta,train_loss,recon_ll,kl,val_avgmin1_ade,val_avgmin6_ade,"
         "val_avgmin6_fde,val_mr6\n";
}

inline void write_log_row(std::ofstream& out, const EpochLog& row) {
  using camnet::detail::format_double;
  out << row.epoch << ',' << format_double(row.lr) << ',' << format_double(row.beta) << ','
      << format_double(row.train_loss) << ',' << format_double(row.recon_ll) << ','
      << format_double(row.kl) << ',' << format_double(row.val_avgmin1_ade) << ','
      << format_double(row.val_avgmin6_ade) << ',' << format_double(row.val_avgmin6_fde) << ','
      << format_double(row.val_mr6) << '\n';
  out.flush();
}

}  // namespace detail

// Epoch loop: cosine lr, linear beta warm-up, Adam with decoupled weight
// decay, per-epoch validation at k=1 and k=k_eval, best checkpoint by
// AvgMin_k ADE. Validation sampling noise is fixed across epochs so the
// metric series is comparable.
inline TrainResult train(const std::vector<Scenario>& train_split,
                         const std::vector<Scenario>& val_split, const ModelConfig& mcfg,
                         const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  if (train_split.empty()) throw_error(ErrorKind::EmptyDataset, "train: empty train split");

  TrainResult result;
  if (tcfg.warm_start) {
    result.model = load_model(*tcfg.warm_start);
    if (result.model.config.to_json() != mcfg.to_json())
      throw_error(ErrorKind::Config, "train: warm-start checkpoint config differs");
    log::info("warm start from " + tcfg.warm_start->string());
  } else {
    result.model = init_model(mcfg, tcfg.seed);
  }
  std::vector<ad::Tensor> params = result.model.params();
  ad::AdamState adam = ad::AdamState::init(params);
  ad::CosineSchedule sched{tcfg.lr_start, tcfg.lr_end, tcfg.epochs};
  const uint64_t eval_seed = mix_seed(tcfg.seed, fnv1a("eval"));

  std::ofstream log_file;
  if (!tcfg.log_path.empty()) {
    log_file.open(tcfg.log_path, std::ios::trunc);
    if (!log_file) throw_error(ErrorKind::Io, "cannot open log: " + tcfg.log_path.string());
    detail::write_log_header(log_file);
  }

  std::vector<size_t> order(train_split.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    double lr = sched.lr(epoch);
    double beta = mcfg.beta_at(epoch);

    // Fisher-Yates shuffle on a deterministic per-epoch stream
    Rng shuffle_rng(mix_seed(mix_seed(tcfg.seed, fnv1a("shuffle")), (uint64_t)epoch));
    for (size_t i = order.size(); i > 1; --i) {
      size_t j = (size_t)shuffle_rng.below(i);
      std::swap(order[i - 1], order[j]);
    }

    double loss_sum = 0.0, recon_sum = 0.0, kl_sum = 0.0;
    size_t n_batches = (order.size() + tcfg.batch_size - 1) / tcfg.batch_size;
    for (size_t b = 0; b < n_batches; ++b) {
      size_t lo = b * tcfg.batch_size;
      size_t hi = std::min(order.size(), lo + tcfg.batch_size);
      ad::zero_grads(params);
      for (size_t idx = lo; idx < hi; ++idx) {
        const Scenario& s = train_split[order[idx]];
        try {
          uint64_t noise = mix_seed(mix_seed(tcfg.seed, (uint64_t)epoch), fnv1a(s.id));
          ElboResult res = elbo(s, result.model, beta, noise);
          loss_sum += res.loss.item();
          recon_sum += res.recon_ll;
          kl_sum += res.kl;
          ad::backward(ad::scale(res.loss, 1.0 / (double)(hi - lo)));
        } catch (const Error& e) {
          if (e.kind() == ErrorKind::NonFiniteValue)
            log::error("non-finite value in epoch " + std::to_string(epoch) + " batch " +
                       std::to_string(b) + " (scenario " + s.id + ")");
          throw;
        }
      }
      ad::adam_step(params, adam, lr, tcfg.weight_decay);
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.beta = beta;
    row.train_loss = loss_sum / (double)train_split.size();
    row.recon_ll = recon_sum / (double)train_split.size();
    row.kl = kl_sum / (double)train_split.size();

    if (!val_split.empty()) {
      std::vector<PredictionSet> preds;
      for (const Scenario& s : val_split) {
        auto ps = focal_predictions(s, result.model, tcfg.k_eval, eval_seed);
        preds.insert(preds.end(), std::make_move_iterator(ps.begin()),
                     std::make_move_iterator(ps.end()));
      }
      MetricsReport at1 = evaluate(preds, 1);
      MetricsReport atk = evaluate(preds, tcfg.k_eval);
      row.val_avgmin1_ade = at1.avgmin_ade;
      row.val_avgmin6_ade = atk.avgmin_ade;
      row.val_avgmin6_fde = atk.avgmin_fde;
      row.val_mr6 = atk.avg_mr;
      if (row.val_avgmin6_ade < result.best_val_ade) {
        result.best_val_ade = row.val_avgmin6_ade;
        result.best_epoch = epoch;
        if (!tcfg.checkpoint_path.empty())
          save_model(tcfg.checkpoint_path, result.model, epoch);
      }
    } else {
      double nan = std::numeric_limits<double>::quiet_NaN();
      row.val_avgmin1_ade = row.val_avgmin6_ade = row.val_avgmin6_fde = row.val_mr6 = nan;
    }

    if (log_file.is_open()) detail::write_log_row(log_file, row);
    result.log.push_back(row);
  }

  // no validation signal: persist the final weights so the artifact exists
  if (val_split.empty() && !tcfg.checkpoint_path.empty())
    save_model(tcfg.checkpoint_path, result.model, tcfg.epochs - 1);
  return result;
}

}  // namespace camnet::model
