#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mac/data.hpp"
#include "mac/errors.hpp"

namespace mac {

struct ErrorSummary {
  double mae = 0.0;
  double mse = 0.0;
  std::optional<double> mape;  ///< percent; empty when some ground truth is 0
  double median_se = 0.0;
  double se_p75 = 0.0;
  double se_p90 = 0.0;
  double se_p95 = 0.0;
};

struct MetricsReport {
  std::size_t n = 0;
  std::vector<std::string> outputs;
  std::vector<ErrorSummary> per_output;
  ErrorSummary aggregate;  ///< pooled over every (sample, output) pair
};

/// Nearest-rank percentile of an ascending sequence: element ceil(p/100·n).
inline double nearest_rank(std::span<const double> sorted, double percent) {
  if (sorted.empty()) return 0.0;
  auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

/// Middle element, or the mean of the two middle elements.
inline double median_of_sorted(std::span<const double> sorted) {
  if (sorted.empty()) return 0.0;
  const std::size_t n = sorted.size();
  return n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

inline ErrorSummary summarize_errors(std::span<const double> truth, std::span<const double> pred) {
  ErrorSummary s;
  const std::size_t n = truth.size();
  if (n == 0) return s;
  std::vector<double> se(n);
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  bool pct_ok = true;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = truth[i] - pred[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    se[i] = e * e;
    if (truth[i] == 0.0) {
      pct_ok = false;
    } else {
      pct_sum += std::abs(e / truth[i]);
    }
  }
  const double count = static_cast<double>(n);
  s.mae = abs_sum / count;
  s.mse = sq_sum / count;
  if (pct_ok) s.mape = 100.0 * pct_sum / count;
  std::sort(se.begin(), se.end());
  s.median_se = median_of_sorted(se);
  s.se_p75 = nearest_rank(se, 75.0);
  s.se_p90 = nearest_rank(se, 90.0);
  s.se_p95 = nearest_rank(se, 95.0);
  return s;
}

/// truth and pred are row-major [n×outputs].
inline MetricsReport compute_metrics(std::span<const double> truth, std::span<const double> pred,
                                     const std::vector<std::string>& outputs) {
  const std::size_t k = outputs.size();
  if (k == 0 || truth.size() != pred.size() || truth.size() % k != 0) {
    throw DimensionError("compute_metrics: truth/prediction sizes do not match the output count");
  }
  MetricsReport r;
  r.n = truth.size() / k;
  r.outputs = outputs;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> t, p;
    for (std::size_t i = 0; i < r.n; ++i) {
      t.push_back(truth[i * k + j]);
      p.push_back(pred[i * k + j]);
    }
    r.per_output.push_back(summarize_errors(t, p));
  }
  r.aggregate = summarize_errors(truth, pred);
  return r;
}

namespace detail {

inline ErrorSummary mean_summary(const std::vector<const ErrorSummary*>& items) {
  ErrorSummary s;
  const double n = static_cast<double>(items.size());
  bool pct_ok = true;
  double pct = 0.0;
  for (const auto* it : items) {
    s.mae += it->mae;
    s.mse += it->mse;
    s.median_se += it->median_se;
    s.se_p75 += it->se_p75;
    s.se_p90 += it->se_p90;
    s.se_p95 += it->se_p95;
    if (it->mape) {
      pct += *it->mape;
    } else {
      pct_ok = false;
    }
  }
  for (double* v : {&s.mae, &s.mse, &s.median_se, &s.se_p75, &s.se_p90, &s.se_p95}) *v /= n;
  if (pct_ok) s.mape = pct / n;
  return s;
}

}  // namespace detail

/// Field-wise arithmetic mean of reports over the same outputs.
inline MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ContractError("average_reports: no reports");
  MetricsReport r;
  r.outputs = reports[0].outputs;
  std::size_t total = 0;
  for (const auto& rep : reports) {
    if (rep.outputs != r.outputs) throw ContractError("average_reports: output names differ");
    total += rep.n;
  }
  r.n = total;
  for (std::size_t j = 0; j < r.outputs.size(); ++j) {
    std::vector<const ErrorSummary*> items;
    for (const auto& rep : reports) items.push_back(&rep.per_output[j]);
    r.per_output.push_back(detail::mean_summary(items));
  }
  std::vector<const ErrorSummary*> items;
  for (const auto& rep : reports) items.push_back(&rep.aggregate);
  r.aggregate = detail::mean_summary(items);
  return r;
}

inline Json summary_to_json(const ErrorSummary& s) {
  return Json{{"mae", s.mae},
              {"mse", s.mse},
              {"mape", s.mape ? Json(*s.mape) : Json(nullptr)},
              {"median_se", s.median_se},
              {"se_p75", s.se_p75},
              {"se_p90", s.se_p90},
              {"se_p95", s.se_p95}};
}

inline Json report_to_json(const MetricsReport& r) {
  Json per = Json::object();
  for (std::size_t j = 0; j < r.outputs.size(); ++j) per[r.outputs[j]] = summary_to_json(r.per_output[j]);
  return Json{{"n", r.n}, {"aggregate", summary_to_json(r.aggregate)}, {"per_output", per}};
}

/// Plain-text table: one row per output plus the pooled row.
inline std::string format_report(const MetricsReport& r, const std::string& title = {}) {
  std::ostringstream os;
  if (!title.empty()) os << title << "\n";
  auto row = [&os](const std::string& name, const ErrorSummary& s) {
    os << std::left << std::setw(24) << name << std::right << std::fixed << std::setprecision(4) << std::setw(12)
       << s.mae << std::setw(14) << s.mse << std::setw(10);
    if (s.mape) {
      os << std::setprecision(2) << *s.mape << '%';
    } else {
      os << "n/a" << ' ';
    }
    os << std::setprecision(4) << std::setw(13) << s.median_se << std::setw(13) << s.se_p75 << std::setw(13)
       << s.se_p90 << std::setw(13) << s.se_p95 << "\n";
  };
  os << std::left << std::setw(24) << "output" << std::right << std::setw(12) << "MAE" << std::setw(14) << "MSE"
     << std::setw(11) << "MAPE" << std::setw(13) << "MedianSE" << std::setw(13) << "SE p75" << std::setw(13)
     << "SE p90" << std::setw(13) << "SE p95" << "\n";
  for (std::size_t j = 0; j < r.outputs.size(); ++j) row(r.outputs[j], r.per_output[j]);
  if (r.outputs.size() > 1) row("(all)", r.aggregate);
  os << "n = " << r.n << "\n";
  return os.str();
}

}  // namespace mac
