// Copyright 2026 The bnmr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bnmr/km_reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bnmr/stats.hpp"

namespace bnmr {

namespace {

constexpr double kRiseTolerance = 0.005;
constexpr int kMaxAdjustPasses = 50;

void validate_risk(const RiskTable& risk) {
  if (risk.rows.empty()) throw ValidationError("risk table: empty");
  if (risk.rows.front().time != 0.0)
    throw ValidationError("risk table: first row must be at time 0");
  for (std::size_t i = 0; i < risk.rows.size(); ++i) {
    if (risk.rows[i].n_at_risk < 1)
      throw ValidationError("risk table: count at time " + std::to_string(risk.rows[i].time) +
                            " must be positive");
    if (i > 0) {
      if (!(risk.rows[i].time > risk.rows[i - 1].time))
        throw ValidationError("risk table: times must be strictly increasing");
      if (risk.rows[i].n_at_risk > risk.rows[i - 1].n_at_risk)
        throw ValidationError("risk table: counts must be non-increasing");
    }
  }
}

}  // namespace

DigitizedCurve normalize_curve(const DigitizedCurve& curve, std::vector<std::string>* warnings) {
  if (curve.points.empty()) throw ValidationError("curve: empty");
  DigitizedCurve out;
  if (curve.points.front().time != 0.0) {
    out.points.push_back({0.0, 1.0});
  } else if (curve.points.front().survival != 1.0) {
    throw ValidationError("curve: survival at time 0 must be 1");
  }
  double prev_t = -1.0;
  double running = 1.0;
  for (const auto& p : curve.points) {
    if (!(std::isfinite(p.time) && std::isfinite(p.survival)))
      throw ValidationError("curve: non-finite point");
    if (p.time < 0.0) throw ValidationError("curve: negative time");
    if (p.survival < 0.0 || p.survival > 1.0)
      throw ValidationError("curve: survival outside [0,1] at time " + std::to_string(p.time));
    if (p.time <= prev_t)
      throw ValidationError("curve: times must be strictly increasing near t=" + std::to_string(p.time));
    double s = p.survival;
    if (s > running) {
      if (s - running > kRiseTolerance)
        throw ValidationError("curve: survival rises by " + std::to_string(s - running) +
                              " at time " + std::to_string(p.time) + " (beyond digitization tolerance)");
      if (warnings)
        warnings->push_back("curve: clipped a " + std::to_string(s - running) + " rise at time " +
                            std::to_string(p.time));
      s = running;
    }
    out.points.push_back({p.time, s});
    running = s;
    prev_t = p.time;
  }
  return out;
}

namespace {

struct Drop {
  double time;
  double survival;  // curve value just after the drop
};

struct IntervalSim {
  std::vector<KMRecord> records;
  long long n_end = 0;
  double s_end = 1.0;
};

// Places c censorings at constant rate inside [t_lo, t_hi) and walks the
// curve drops in time order, reading event counts off the survival ratios.
IntervalSim simulate_interval(std::span<const Drop> drops, long long c, double t_lo, double t_hi,
                              long long n_enter, double s_enter) {
  IntervalSim sim;
  sim.n_end = n_enter;
  sim.s_end = s_enter;
  std::size_t next_drop = 0;
  const double width = t_hi - t_lo;
  long long placed_cens = 0;
  const auto next_cens_time = [&]() {
    return t_lo + (static_cast<double>(placed_cens) + 0.5) * width / static_cast<double>(c);
  };
  while (next_drop < drops.size() || placed_cens < c) {
    const bool have_drop = next_drop < drops.size();
    const bool have_cens = placed_cens < c;
    const double tc = have_cens ? next_cens_time() : 0.0;
    const bool take_drop = have_drop && (!have_cens || drops[next_drop].time <= tc);
    if (take_drop) {
      const Drop& d = drops[next_drop++];
      if (sim.n_end > 0 && sim.s_end > 0.0) {
        const double frac = 1.0 - d.survival / sim.s_end;
        long long ev = static_cast<long long>(round_half_up(static_cast<double>(sim.n_end) * frac));
        ev = std::clamp(ev, 0LL, sim.n_end);
        if (ev > 0) {
          for (long long e = 0; e < ev; ++e) sim.records.push_back({d.time, true});
          sim.s_end *= 1.0 - static_cast<double>(ev) / static_cast<double>(sim.n_end);
          sim.n_end -= ev;
        }
      }
    } else {
      if (sim.n_end > 0) {
        sim.records.push_back({tc, false});
        sim.n_end -= 1;
      }
      ++placed_cens;
    }
  }
  return sim;
}

}  // namespace

ReconstructionReport reconstruct(const DigitizedCurve& curve_in, const RiskTable& risk,
                                 std::optional<long long> total_events) {
  ReconstructionReport report;
  const DigitizedCurve curve = normalize_curve(curve_in, &report.warnings);
  validate_risk(risk);
  if (curve.points.front().survival != 1.0 || curve.points.front().time != 0.0)
    throw ValidationError("curve: must start at (0, 1)");

  // Curve drops, in time order. A drop at time 0 has nowhere to live.
  std::vector<Drop> drops;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    if (curve.points[i].survival < curve.points[i - 1].survival) {
      if (curve.points[i].time == 0.0) throw ValidationError("curve: drop at time 0");
      drops.push_back({curve.points[i].time, curve.points[i].survival});
    }
  }

  const std::size_t n_intervals = risk.rows.size();
  long long n = risk.rows[0].n_at_risk;
  double s_rec = 1.0;
  std::size_t drop_cursor = 0;

  // curve survival value at interval entry, for the initial censoring guess
  const auto curve_value_before = [&](double t) {
    double s = 1.0;
    for (const auto& p : curve.points) {
      if (p.time < t) s = p.survival;
      else break;
    }
    return s;
  };

  for (std::size_t i = 0; i + 1 < n_intervals; ++i) {
    const double t_lo = risk.rows[i].time;
    const double t_hi = risk.rows[i + 1].time;
    const long long target = risk.rows[i + 1].n_at_risk;

    std::size_t end_cursor = drop_cursor;
    while (end_cursor < drops.size() && drops[end_cursor].time < t_hi) ++end_cursor;
    const std::span<const Drop> local(drops.data() + drop_cursor, end_cursor - drop_cursor);

    // first guess: attribute the survival ratio to events alone
    const double s_exit = curve_value_before(t_hi);
    const double s_enter_curve = curve_value_before(t_lo + 1e-12);
    long long c = 0;
    if (s_enter_curve > 0.0) {
      const double n_after_events = static_cast<double>(n) * s_exit / s_enter_curve;
      c = std::clamp(static_cast<long long>(round_half_up(n_after_events)) - target, 0LL, n);
    }

    bool matched = false;
    IntervalSim sim;
    for (int pass = 0; pass < kMaxAdjustPasses; ++pass) {
      ++report.iterations;
      sim = simulate_interval(local, c, t_lo, t_hi, n, s_rec);
      if (sim.n_end == target) {
        matched = true;
        break;
      }
      const long long adjusted = std::clamp(c + (sim.n_end - target), 0LL, n);
      if (adjusted == c) break;  // clamped into a wall; no integer count can match
      c = adjusted;
    }
    if (!matched) {
      std::ostringstream msg;
      msg << "reconstruct: interval [" << t_lo << ", " << t_hi << ") cannot match the risk table"
          << " (target " << target << ", closest " << sim.n_end << " with " << c << " censorings)";
      throw ValidationError(msg.str());
    }
    report.records.insert(report.records.end(), sim.records.begin(), sim.records.end());
    n = sim.n_end;
    s_rec = sim.s_end;
    drop_cursor = end_cursor;
  }

  // Tail beyond the last risk-table time: remaining drops, then residuals.
  const double t_last_risk = risk.rows.back().time;
  const double t_end = std::max(curve.points.back().time, t_last_risk);
  {
    const std::span<const Drop> tail(drops.data() + drop_cursor, drops.size() - drop_cursor);
    IntervalSim sim = simulate_interval(tail, 0, t_last_risk, t_end, n, s_rec);
    report.records.insert(report.records.end(), sim.records.begin(), sim.records.end());
    n = sim.n_end;
  }
  if (total_events) {
    long long events_so_far = 0;
    for (const auto& r : report.records) events_so_far += r.event ? 1 : 0;
    const long long residual = *total_events - events_so_far;
    if (residual > 0) {
      const long long extra = std::min(residual, n);
      for (long long e = 0; e < extra; ++e) report.records.push_back({t_end, true});
      n -= extra;
      if (extra < residual)
        report.warnings.push_back("reconstruct: reported total_events exceeds reconstructable events by " +
                                  std::to_string(residual - extra));
    } else if (residual < 0) {
      report.warnings.push_back("reconstruct: reconstructed " + std::to_string(-residual) +
                                " more events than the reported total");
    }
  }
  for (long long j = 0; j < n; ++j) report.records.push_back({t_end, false});

  report.sup_deviation = roundtrip_error(curve, report.records);
  return report;
}

DigitizedCurve km_estimate(std::span<const KMRecord> records) {
  if (records.empty()) throw ValidationError("km_estimate: no records");
  std::vector<KMRecord> sorted(records.begin(), records.end());
  for (const auto& r : sorted) {
    if (!(r.time > 0.0) || !std::isfinite(r.time))
      throw ValidationError("km_estimate: times must be positive and finite");
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const KMRecord& a, const KMRecord& b) { return a.time < b.time; });

  DigitizedCurve out;
  out.points.push_back({0.0, 1.0});
  double s = 1.0;
  std::size_t i = 0;
  long long at_risk = static_cast<long long>(sorted.size());
  while (i < sorted.size()) {
    const double t = sorted[i].time;
    long long d = 0, lost = 0;
    while (i < sorted.size() && sorted[i].time == t) {
      d += sorted[i].event ? 1 : 0;
      ++lost;
      ++i;
    }
    if (d > 0) s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
    at_risk -= lost;
    out.points.push_back({t, s});
  }
  return out;
}

double roundtrip_error(const DigitizedCurve& curve, std::span<const KMRecord> records) {
  const DigitizedCurve norm = normalize_curve(curve);
  const DigitizedCurve km = km_estimate(records);
  double worst = 0.0;
  std::size_t j = 0;
  double s_km = 1.0;
  for (const auto& p : norm.points) {
    while (j < km.points.size() && km.points[j].time <= p.time) {
      s_km = km.points[j].survival;
      ++j;
    }
    worst = std::max(worst, std::abs(p.survival - s_km));
  }
  return worst;
}

}  // namespace bnmr
