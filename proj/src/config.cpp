#include "gdmpc/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gdmpc/io.hpp"

namespace gdmpc {

namespace {

using nlohmann::json;

// Tracks consumed keys so typos in config files fail loudly.
class StrictObject {
 public:
  StrictObject(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) throw ConfigError(name_ + " must be a JSON object");
    for (const auto& item : j.items()) remaining_.insert(item.key());
  }

  bool has(const std::string& key) {
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    remaining_.erase(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  json raw(const std::string& key) {
    remaining_.erase(key);
    return j_.contains(key) ? j_.at(key) : json::object();
  }

  ~StrictObject() noexcept(false) {
    if (!remaining_.empty() && !std::uncaught_exceptions())
      throw ConfigError(name_ + ": unknown key '" + *remaining_.begin() + "'");
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> remaining_;
};

double dbm_per_hz_to_linear(double dbm) { return std::pow(10.0, dbm / 10.0) / 1000.0; }

}  // namespace

void EvalConfig::validate() const {
  if (rollout_T < 1) throw ConfigError("eval: rollout_T must be >= 1");
  if (horizons.empty()) throw ConfigError("eval: at least one horizon required");
  for (auto h : horizons)
    if (h < 1 || h > rollout_T) throw ConfigError("eval: horizons must lie in 1..rollout_T");
}

void SplitConfig::validate() const {
  if (train < 1 || val < 1 || test < 1) throw ConfigError("split: all counts must be >= 1");
}

std::vector<std::size_t> split_counts(std::size_t total, const std::vector<std::size_t>& ratio) {
  std::size_t denom = 0;
  for (auto r : ratio) denom += r;
  if (denom == 0) throw ConfigError("split ratio sums to zero");

  std::vector<std::size_t> counts(ratio.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    const double exact = static_cast<double>(total * ratio[i]) / static_cast<double>(denom);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) counts[remainders[i].second] += 1;
  return counts;
}

void ExperimentConfig::validate() const {
  network.validate();
  expert.validate();
  gnn.validate();
  train.validate();
  eval.validate();
  split.validate();
  if (schedule.steps < 1) throw ConfigError("schedule: steps must be >= 1");
  if (!(f_min_percentile > 0.0 && f_min_percentile <= 100.0))
    throw ConfigError("f_min_percentile must lie in (0, 100]");
}

NetworkConfig network_config_from_json(const json& j) {
  StrictObject o(j, "network");
  NetworkConfig c;
  c.n_pairs = o.get<std::size_t>("n_pairs", c.n_pairs);
  c.density_per_km2 = o.get<double>("density_per_km2", c.density_per_km2);
  c.p_max_w = o.get<double>("p_max_w", c.p_max_w);
  c.bandwidth_hz = o.get<double>("bandwidth_hz", c.bandwidth_hz);
  if (o.has("noise_psd_dbm_per_hz"))
    c.noise_psd_w_per_hz = dbm_per_hz_to_linear(o.get<double>("noise_psd_dbm_per_hz", -174.0));
  c.noise_psd_w_per_hz = o.get<double>("noise_psd_w_per_hz", c.noise_psd_w_per_hz);
  c.shadowing_sigma_db = o.get<double>("shadowing_sigma_db", c.shadowing_sigma_db);
  c.breakpoint_m = o.get<double>("breakpoint_m", c.breakpoint_m);
  c.pathloss_exp_near = o.get<double>("pathloss_exp_near", c.pathloss_exp_near);
  c.pathloss_exp_far = o.get<double>("pathloss_exp_far", c.pathloss_exp_far);
  c.pathloss_ref_db = o.get<double>("pathloss_ref_db", c.pathloss_ref_db);
  c.rx_dist_min_m = o.get<double>("rx_dist_min_m", c.rx_dist_min_m);
  c.rx_dist_max_m = o.get<double>("rx_dist_max_m", c.rx_dist_max_m);
  c.f_min = o.get<double>("f_min", c.f_min);
  c.area_side_m = NetworkConfig::area_side_for(c.n_pairs, c.density_per_km2);
  return c;
}

json network_config_to_json(const NetworkConfig& c) {
  return json{{"n_pairs", c.n_pairs},
              {"density_per_km2", c.density_per_km2},
              {"p_max_w", c.p_max_w},
              {"bandwidth_hz", c.bandwidth_hz},
              {"noise_psd_w_per_hz", c.noise_psd_w_per_hz},
              {"shadowing_sigma_db", c.shadowing_sigma_db},
              {"breakpoint_m", c.breakpoint_m},
              {"pathloss_exp_near", c.pathloss_exp_near},
              {"pathloss_exp_far", c.pathloss_exp_far},
              {"pathloss_ref_db", c.pathloss_ref_db},
              {"rx_dist_min_m", c.rx_dist_min_m},
              {"rx_dist_max_m", c.rx_dist_max_m},
              {"f_min", c.f_min}};
}

ExpertConfig expert_config_from_json(const json& j) {
  StrictObject o(j, "expert");
  ExpertConfig c;
  c.t_total = o.get<std::size_t>("t_total", c.t_total);
  c.t_burn = o.get<std::size_t>("t_burn", c.t_total / 5);
  c.eta_dual = o.get<double>("eta_dual", c.eta_dual);
  c.eta_primal = o.get<double>("eta_primal", -1.0);  // resolved against p_max below
  c.primal_steps = o.get<std::size_t>("primal_steps", c.primal_steps);
  c.n_restarts = o.get<std::size_t>("n_restarts", c.n_restarts);
  c.corner_starts = o.get<bool>("corner_starts", c.corner_starts);
  c.buffer_capacity = o.get<std::size_t>("buffer_capacity", c.buffer_capacity);
  return c;
}

json expert_config_to_json(const ExpertConfig& c) {
  return json{{"t_total", c.t_total},       {"t_burn", c.t_burn},
              {"eta_dual", c.eta_dual},     {"eta_primal", c.eta_primal},
              {"primal_steps", c.primal_steps}, {"n_restarts", c.n_restarts},
              {"corner_starts", c.corner_starts},
              {"buffer_capacity", c.buffer_capacity}};
}

GnnConfig gnn_config_from_json(const json& j) {
  StrictObject o(j, "gnn");
  GnnConfig c;
  c.n_layers = o.get<std::size_t>("n_layers", c.n_layers);
  c.features = o.get<std::size_t>("features", c.features);
  c.filter_hops = o.get<std::size_t>("filter_hops", c.filter_hops);
  c.embed_dim = o.get<std::size_t>("embed_dim", c.embed_dim);
  const std::string act = o.get<std::string>("nonlinearity", "relu");
  if (act == "relu")
    c.act = Nonlinearity::relu;
  else if (act == "silu")
    c.act = Nonlinearity::silu;
  else
    throw ConfigError("gnn.nonlinearity must be relu or silu");
  return c;
}

json gnn_config_to_json(const GnnConfig& c) {
  return json{{"n_layers", c.n_layers},
              {"features", c.features},
              {"filter_hops", c.filter_hops},
              {"embed_dim", c.embed_dim},
              {"nonlinearity", c.act == Nonlinearity::relu ? "relu" : "silu"}};
}

TrainConfig train_config_from_json(const json& j) {
  StrictObject o(j, "train");
  TrainConfig c;
  c.max_epochs = o.get<std::size_t>("max_epochs", c.max_epochs);
  c.batch_graphs = o.get<std::size_t>("batch_graphs", c.batch_graphs);
  c.signals_per_graph = o.get<std::size_t>("signals_per_graph", c.signals_per_graph);
  c.lr_init = o.get<double>("lr_init", c.lr_init);
  c.lr_min = o.get<double>("lr_min", c.lr_min);
  c.adam_beta1 = o.get<double>("adam_beta1", c.adam_beta1);
  c.adam_beta2 = o.get<double>("adam_beta2", c.adam_beta2);
  c.adam_eps = o.get<double>("adam_eps", c.adam_eps);
  c.warm_restart_t0 = o.get<std::size_t>("warm_restart_t0", c.warm_restart_t0);
  c.warm_restart_mult = o.get<std::size_t>("warm_restart_mult", c.warm_restart_mult);
  c.validate_every = o.get<std::size_t>("validate_every", c.validate_every);
  c.val_rollout_T = o.get<std::size_t>("val_rollout_T", c.val_rollout_T);
  c.grad_clip = o.get<double>("grad_clip", c.grad_clip);
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"max_epochs", c.max_epochs},
              {"batch_graphs", c.batch_graphs},
              {"signals_per_graph", c.signals_per_graph},
              {"lr_init", c.lr_init},
              {"lr_min", c.lr_min},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"warm_restart_t0", c.warm_restart_t0},
              {"warm_restart_mult", c.warm_restart_mult},
              {"validate_every", c.validate_every},
              {"val_rollout_T", c.val_rollout_T},
              {"grad_clip", c.grad_clip}};
}

ScheduleConfig schedule_config_from_json(const json& j) {
  StrictObject o(j, "schedule");
  ScheduleConfig c;
  const std::string kind = o.get<std::string>("kind", "cosine");
  if (kind == "cosine")
    c.kind = ScheduleKind::cosine;
  else if (kind == "linear")
    c.kind = ScheduleKind::linear;
  else
    throw ConfigError("schedule.kind must be linear or cosine");
  c.steps = o.get<std::size_t>("steps", c.steps);
  const std::string snr = o.get<std::string>("snr_form", "conventional");
  if (snr == "conventional")
    c.snr_form = SnrForm::conventional;
  else if (snr == "alpha_sq")
    c.snr_form = SnrForm::alpha_sq;
  else
    throw ConfigError("schedule.snr_form must be conventional or alpha_sq");
  c.weight_min = o.get<double>("weight_min", c.weight_min);
  c.weight_max = o.get<double>("weight_max", c.weight_max);
  if (!(c.weight_min > 0.0 && c.weight_min <= c.weight_max))
    throw ConfigError("schedule: require 0 < weight_min <= weight_max");
  return c;
}

json schedule_config_to_json(const ScheduleConfig& c) {
  return json{{"kind", c.kind == ScheduleKind::cosine ? "cosine" : "linear"},
              {"steps", c.steps},
              {"snr_form", c.snr_form == SnrForm::conventional ? "conventional" : "alpha_sq"},
              {"weight_min", c.weight_min},
              {"weight_max", c.weight_max}};
}

namespace {

EvalConfig eval_config_from_json(const json& j) {
  StrictObject o(j, "eval");
  EvalConfig c;
  c.rollout_T = o.get<std::size_t>("rollout_T", c.rollout_T);
  c.horizons = o.get<std::vector<std::size_t>>("horizons", c.horizons);
  const std::string mode = o.get<std::string>("gdm_mode", "cached");
  if (mode == "cached")
    c.gdm_mode = GdmSampling::cached;
  else if (mode == "fresh")
    c.gdm_mode = GdmSampling::fresh;
  else
    throw ConfigError("eval.gdm_mode must be fresh or cached");
  return c;
}

json eval_config_to_json(const EvalConfig& c) {
  return json{{"rollout_T", c.rollout_T},
              {"horizons", c.horizons},
              {"gdm_mode", c.gdm_mode == GdmSampling::cached ? "cached" : "fresh"}};
}

SplitConfig split_config_from_json(const json& j) {
  StrictObject o(j, "split");
  SplitConfig c;
  if (o.has("ratio")) {
    const auto ratio = o.get<std::vector<std::size_t>>("ratio", {});
    const auto total = o.get<std::size_t>("total", 0);
    if (ratio.size() != 3) throw ConfigError("split.ratio must have three entries");
    const auto counts = split_counts(total, ratio);
    c.train = counts[0];
    c.val = counts[1];
    c.test = counts[2];
    return c;
  }
  c.train = o.get<std::size_t>("train", c.train);
  c.val = o.get<std::size_t>("val", c.val);
  c.test = o.get<std::size_t>("test", c.test);
  return c;
}

json split_config_to_json(const SplitConfig& c) {
  return json{{"train", c.train}, {"val", c.val}, {"test", c.test}};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  StrictObject o(j, "experiment");
  ExperimentConfig c;
  c.network = network_config_from_json(o.raw("network"));
  c.expert = expert_config_from_json(o.raw("expert"));
  c.gnn = gnn_config_from_json(o.raw("gnn"));
  c.train = train_config_from_json(o.raw("train"));
  c.schedule = schedule_config_from_json(o.raw("schedule"));
  c.eval = eval_config_from_json(o.raw("eval"));
  c.split = split_config_from_json(o.raw("split"));
  if (c.expert.eta_primal < 0.0) c.expert.eta_primal = 0.05 * c.network.p_max_w;

  const json fm = o.raw("f_min_mode");
  if (fm.is_string()) {
    const std::string mode = fm.get<std::string>();
    if (mode == "auto")
      c.f_min_auto = true;
    else if (mode == "fixed")
      c.f_min_auto = false;
    else
      throw ConfigError("f_min_mode must be auto or fixed");
  }
  c.f_min_percentile = o.get<double>("f_min_percentile", c.f_min_percentile);
  c.master_seed = o.get<std::uint64_t>("master_seed", c.master_seed);
  c.validate();
  return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
  return json{{"network", network_config_to_json(c.network)},
              {"expert", expert_config_to_json(c.expert)},
              {"gnn", gnn_config_to_json(c.gnn)},
              {"train", train_config_to_json(c.train)},
              {"schedule", schedule_config_to_json(c.schedule)},
              {"eval", eval_config_to_json(c.eval)},
              {"split", split_config_to_json(c.split)},
              {"f_min_mode", c.f_min_auto ? "auto" : "fixed"},
              {"f_min_percentile", c.f_min_percentile},
              {"master_seed", c.master_seed}};
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse failure: ") + e.what());
  }
  return experiment_config_from_json(j);
}

std::string experiment_config_hash(const ExperimentConfig& config) {
  return io::digest_hex(experiment_config_to_json(config).dump());
}

}  // namespace gdmpc
