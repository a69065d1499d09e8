#include "gdmpc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gdmpc {

struct PolicySource::Impl {
  enum class Kind { full_power, average_power, expert_replay, gdm } kind;

  // average_power / expert_replay
  Tensor buffer_rows;  // (B, N)
  std::vector<double> fixed;
  bool uniform_resample = false;

  // gdm
  const GnnParams* params = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const Gso* gso = nullptr;
  GdmSampling mode = GdmSampling::fresh;
  std::size_t cache_size = 0;
  Tensor cache;  // (cache_size, N) generated lazily on first step
  std::vector<std::size_t> cache_order;
  bool cache_ready = false;
};

PolicySource PolicySource::full_power() {
  PolicySource s;
  s.impl_ = std::make_shared<Impl>();
  s.impl_->kind = Impl::Kind::full_power;
  s.tag_ = "full_power";
  return s;
}

PolicySource PolicySource::average_power(const ExpertBuffer& buffer) {
  PolicySource s;
  s.impl_ = std::make_shared<Impl>();
  s.impl_->kind = Impl::Kind::average_power;
  s.impl_->fixed = buffer.row_mean();
  s.tag_ = "average_power";
  return s;
}

PolicySource PolicySource::expert_replay(const ExpertBuffer& buffer, bool uniform_resample) {
  PolicySource s;
  s.impl_ = std::make_shared<Impl>();
  s.impl_->kind = Impl::Kind::expert_replay;
  s.impl_->buffer_rows = buffer.samples;
  s.impl_->uniform_resample = uniform_resample;
  s.tag_ = "expert_replay";
  return s;
}

PolicySource PolicySource::gdm(const GnnParams& params, const NoiseSchedule& schedule,
                               const Gso& gso, GdmSampling mode, std::size_t cache_size) {
  if (mode == GdmSampling::cached && cache_size == 0)
    throw ContractError("cached GDM sampling needs a cache size");
  PolicySource s;
  s.impl_ = std::make_shared<Impl>();
  s.impl_->kind = Impl::Kind::gdm;
  s.impl_->params = &params;
  s.impl_->schedule = &schedule;
  s.impl_->gso = &gso;
  s.impl_->mode = mode;
  s.impl_->cache_size = cache_size;
  s.tag_ = "gdm";
  return s;
}

std::string PolicySource::gdm_mode() const {
  if (impl_->kind != Impl::Kind::gdm) return "";
  return impl_->mode == GdmSampling::fresh ? "fresh" : "cached";
}

std::vector<double> PolicySource::next(std::size_t step, const NetworkConfig& config,
                                       Rng& policy_rng) {
  Impl& im = *impl_;
  switch (im.kind) {
    case Impl::Kind::full_power:
      return std::vector<double>(config.n_pairs, config.p_max_w);
    case Impl::Kind::average_power:
      return im.fixed;
    case Impl::Kind::expert_replay: {
      const std::size_t b = im.uniform_resample
                                ? policy_rng.uniform_index(im.buffer_rows.dim(0))
                                : step % im.buffer_rows.dim(0);
      std::vector<double> x(im.buffer_rows.dim(1));
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = im.buffer_rows.at(b, i);
      return x;
    }
    case Impl::Kind::gdm: {
      if (im.mode == GdmSampling::fresh) {
        const Tensor one =
            sample_policy(*im.gso, *im.params, *im.schedule, policy_rng, 1, config.p_max_w);
        return one.vec();
      }
      if (!im.cache_ready) {
        // Pre-generate the whole batch in one reverse chain, then execute in
        // random order.
        im.cache = sample_policy(*im.gso, *im.params, *im.schedule, policy_rng, im.cache_size,
                                 config.p_max_w);
        im.cache_order.resize(im.cache_size);
        for (std::size_t i = 0; i < im.cache_size; ++i) im.cache_order[i] = i;
        for (std::size_t i = im.cache_size; i > 1; --i)
          std::swap(im.cache_order[i - 1], im.cache_order[policy_rng.uniform_index(i)]);
        im.cache_ready = true;
      }
      const std::size_t b = im.cache_order[step % im.cache_size];
      std::vector<double> x(im.cache.dim(1));
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = im.cache.at(b, i);
      return x;
    }
  }
  throw ContractError("unreachable policy kind");
}

RolloutReport rollout(PolicySource source, const NetworkState& state,
                      const NetworkConfig& config, std::size_t T, std::uint64_t seed) {
  if (T < 1) throw ContractError("rollout requires T >= 1");
  const std::size_t n = state.n();

  RolloutReport report;
  report.network_id = state.id;
  report.policy_tag = source.tag();
  report.gdm_mode = source.gdm_mode();
  report.horizon = T;
  report.fading_seed = derive_seed(seed, "fading");
  report.policy_seed = derive_seed(seed, "policy");
  report.inst_rates = Tensor({T, n});
  report.running_rates = Tensor({T, n});

  Rng policy_rng(report.policy_seed);
  std::vector<double> sums(n, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const FadingSample fading = sample_fading(state, derive_seed(report.fading_seed, "t", t));
    const auto x = source.next(t, config, policy_rng);
    const auto rates = instantaneous_rates(x, fading, config);
    for (std::size_t i = 0; i < n; ++i) {
      report.inst_rates.at(t, i) = rates[i];
      sums[i] += rates[i];
      report.running_rates.at(t, i) = sums[i] / static_cast<double>(t + 1);
    }
  }
  return report;
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) throw ContractError("percentile of empty set");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

namespace {

MetricsSummary summarize(const std::vector<const RolloutReport*>& reports, double f_min,
                         const std::vector<std::size_t>& horizons) {
  MetricsSummary out;
  out.horizons = horizons;
  for (const std::size_t h : horizons) {
    std::vector<double> pooled;
    for (const auto* r : reports) {
      if (h < 1 || h > r->steps()) throw ContractError("horizon outside rollout length");
      for (std::size_t i = 0; i < r->n(); ++i) pooled.push_back(r->running_rates.at(h - 1, i));
    }
    double mean = 0.0;
    std::size_t satisfied = 0;
    for (double v : pooled) {
      mean += v;
      if (v >= f_min) ++satisfied;
    }
    out.mean_rate.push_back(mean / static_cast<double>(pooled.size()));
    out.p5_rate.push_back(percentile_nearest_rank(pooled, 5.0));
    out.satisfaction.push_back(static_cast<double>(satisfied) /
                               static_cast<double>(pooled.size()));
  }
  return out;
}

}  // namespace

MetricsSummary metrics(const RolloutReport& report, double f_min,
                       const std::vector<std::size_t>& horizons) {
  return summarize({&report}, f_min, horizons);
}

MetricsSummary pooled_metrics(std::span<const RolloutReport> reports, double f_min,
                              const std::vector<std::size_t>& horizons) {
  std::vector<const RolloutReport*> ptrs;
  for (const auto& r : reports) ptrs.push_back(&r);
  return summarize(ptrs, f_min, horizons);
}

std::string ComparisonTable::to_csv() const {
  std::string csv = "source,horizon,mean_rate,p5_rate,satisfaction\n";
  char line[160];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%s,%zu,%.10g,%.10g,%.10g\n", r.source.c_str(), r.horizon,
                  r.mean_rate, r.p5_rate, r.satisfaction);
    csv += line;
  }
  return csv;
}

const ComparisonRow& ComparisonTable::find(const std::string& source, std::size_t horizon) const {
  for (const auto& r : rows)
    if (r.source == source && r.horizon == horizon) return r;
  throw ContractError("comparison row not found: " + source);
}

ComparisonTable compare(const std::vector<std::vector<RolloutReport>>& reports_by_source,
                        double f_min, const std::vector<std::size_t>& horizons) {
  if (reports_by_source.empty()) throw ContractError("compare: no sources");
  const auto& first = reports_by_source.front();
  for (const auto& reports : reports_by_source) {
    if (reports.size() != first.size()) throw ContractError("compare: mismatched network sets");
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (reports[i].network_id != first[i].network_id ||
          reports[i].fading_seed != first[i].fading_seed || reports[i].horizon != first[i].horizon)
        throw ContractError("compare: mismatched networks, horizons, or seeds");
    }
  }

  ComparisonTable table;
  for (const auto& reports : reports_by_source) {
    const auto summary = pooled_metrics(std::span(reports.data(), reports.size()), f_min, horizons);
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      table.rows.push_back({reports.front().policy_tag, horizons[h], summary.mean_rate[h],
                            summary.p5_rate[h], summary.satisfaction[h]});
    }
  }
  return table;
}

}  // namespace gdmpc
