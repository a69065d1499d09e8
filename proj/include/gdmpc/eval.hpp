#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gdmpc/diffusion.hpp"
#include "gdmpc/expert.hpp"
#include "gdmpc/net.hpp"

namespace gdmpc {

enum class GdmSampling { fresh, cached };

// A policy that emits one power vector per time step.
class PolicySource {
 public:
  static PolicySource full_power();
  static PolicySource average_power(const ExpertBuffer& buffer);
  // Executes buffer rows in stored (temporal) order, or uniformly resampled.
  static PolicySource expert_replay(const ExpertBuffer& buffer, bool uniform_resample = false);
  static PolicySource gdm(const GnnParams& params, const NoiseSchedule& schedule, const Gso& gso,
                          GdmSampling mode, std::size_t cache_size = 0);

  const std::string& tag() const { return tag_; }
  std::string gdm_mode() const;

  // One power vector per call; draws only from policy_rng.
  std::vector<double> next(std::size_t step, const NetworkConfig& config, Rng& policy_rng);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
  std::string tag_;
};

struct RolloutReport {
  std::string network_id;
  std::string policy_tag;
  std::string gdm_mode;  // empty unless the source is a GDM
  std::size_t horizon = 0;
  Tensor inst_rates;     // (T, N) instantaneous rates
  Tensor running_rates;  // (T, N), row t = (1/(t+1)) sum_{s<=t} inst[s]
  std::uint64_t fading_seed = 0;
  std::uint64_t policy_seed = 0;

  std::size_t n() const { return inst_rates.dim(1); }
  std::size_t steps() const { return inst_rates.dim(0); }
};

// Executes the policy for T steps under fresh fading. The fading stream and
// the policy-sampling stream are derived independently from seed.
RolloutReport rollout(PolicySource source, const NetworkState& state,
                      const NetworkConfig& config, std::size_t T, std::uint64_t seed);

struct MetricsSummary {
  std::vector<std::size_t> horizons;
  std::vector<double> mean_rate;     // per horizon, over pooled receivers
  std::vector<double> p5_rate;       // nearest-rank 5th percentile
  std::vector<double> satisfaction;  // fraction of receivers with rate >= f_min
};

// Nearest-rank percentile of the pooled values (pct in (0, 100]).
double percentile_nearest_rank(std::vector<double> values, double pct);

MetricsSummary metrics(const RolloutReport& report, double f_min,
                       const std::vector<std::size_t>& horizons);
// Pools receivers across all reports (the |T_h| x N population).
MetricsSummary pooled_metrics(std::span<const RolloutReport> reports, double f_min,
                              const std::vector<std::size_t>& horizons);

struct ComparisonRow {
  std::string source;
  std::size_t horizon;
  double mean_rate;
  double p5_rate;
  double satisfaction;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;

  std::string to_csv() const;
  const ComparisonRow& find(const std::string& source, std::size_t horizon) const;
};

// reports_by_source[s] holds one report per network; all sources must cover
// the same networks with the same seeds.
ComparisonTable compare(const std::vector<std::vector<RolloutReport>>& reports_by_source,
                        double f_min, const std::vector<std::size_t>& horizons);

}  // namespace gdmpc
