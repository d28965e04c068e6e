#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/tensor.hpp"

namespace cw {

// Counts are reals, not integers: seed-averaged reports carry fractional
// entries such as tp = 368.2.
struct ConfusionMatrix {
    double tp = 0, fp = 0, fn = 0, tn = 0;

    double total() const { return tp + fp + fn + tn; }
};

inline ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    require(y_true.size() == y_pred.size(),
            "confusion: " + std::to_string(y_true.size()) + " labels vs " +
                std::to_string(y_pred.size()) + " predictions");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        require((y_true[i] == 0 || y_true[i] == 1) && (y_pred[i] == 0 || y_pred[i] == 1),
                "confusion: labels must be binary");
        if (y_true[i] == 1)
            (y_pred[i] == 1 ? cm.tp : cm.fn) += 1.0;
        else
            (y_pred[i] == 1 ? cm.fp : cm.tn) += 1.0;
    }
    return cm;
}

struct CostSpec {
    double c_fp = 10.0;
    double c_fn = 500.0;
};

struct Costs {
    double fp_cost = 0, fn_cost = 0, total = 0;
};

inline Costs total_cost(const ConfusionMatrix& cm, const CostSpec& spec = {}) {
    Costs c;
    c.fp_cost = spec.c_fp * cm.fp;
    c.fn_cost = spec.c_fn * cm.fn;
    c.total = c.fp_cost + c.fn_cost;
    return c;
}

// A 0/0 ratio is reported as an explicit undefined marker, never as 0: silent
// zeros would break the complement identities (precision + FDR = 1, ...).
struct MetricReport {
    ConfusionMatrix cm;
    std::optional<double> accuracy, precision, sensitivity, specificity, f1, npv;
    std::optional<double> fdr, fpr, fnr, for_rate;
    Costs costs;
};

inline std::optional<double> ratio_or_undefined(double num, double den) {
    if (den == 0.0) return std::nullopt;
    return num / den;
}

inline MetricReport metric_suite(const ConfusionMatrix& cm, const CostSpec& spec = {}) {
    MetricReport r;
    r.cm = cm;
    r.accuracy = ratio_or_undefined(cm.tp + cm.tn, cm.total());
    r.precision = ratio_or_undefined(cm.tp, cm.tp + cm.fp);
    r.sensitivity = ratio_or_undefined(cm.tp, cm.tp + cm.fn);
    r.specificity = ratio_or_undefined(cm.tn, cm.fp + cm.tn);
    r.f1 = ratio_or_undefined(2.0 * cm.tp, 2.0 * cm.tp + cm.fp + cm.fn);
    r.npv = ratio_or_undefined(cm.tn, cm.tn + cm.fn);
    r.fdr = ratio_or_undefined(cm.fp, cm.fp + cm.tp);
    r.fpr = ratio_or_undefined(cm.fp, cm.fp + cm.tn);
    r.fnr = ratio_or_undefined(cm.fn, cm.fn + cm.tp);
    r.for_rate = ratio_or_undefined(cm.fn, cm.fn + cm.tn);
    r.costs = total_cost(cm, spec);
    return r;
}

namespace detail {
inline nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v) return "undefined";
    return *v;
}
inline std::string round4(const std::optional<double>& v) {
    if (!v) return "undef";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}
inline std::string trim_number(double v) {
    std::ostringstream os;
    os << std::setprecision(15) << v;
    return os.str();
}
}  // namespace detail

inline nlohmann::json report_json(const MetricReport& r, const std::string& label = {}) {
    nlohmann::json j;
    if (!label.empty()) j["label"] = label;
    j["confusion"] = {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"fn", r.cm.fn}, {"tn", r.cm.tn}};
    j["metrics"] = {{"accuracy", detail::opt_json(r.accuracy)},
                    {"precision", detail::opt_json(r.precision)},
                    {"sensitivity", detail::opt_json(r.sensitivity)},
                    {"specificity", detail::opt_json(r.specificity)},
                    {"f1", detail::opt_json(r.f1)},
                    {"npv", detail::opt_json(r.npv)},
                    {"fdr", detail::opt_json(r.fdr)},
                    {"fpr", detail::opt_json(r.fpr)},
                    {"fnr", detail::opt_json(r.fnr)},
                    {"for", detail::opt_json(r.for_rate)}};
    j["costs"] = {{"fp", r.costs.fp_cost}, {"fn", r.costs.fn_cost}, {"total", r.costs.total}};
    return j;
}

enum class ReportFormat { json, text_table };

// JSON keeps full precision; the text table rounds ratios to 4 decimals,
// mirroring the usual presentation of these results.
inline std::string render_report(const std::vector<std::pair<std::string, MetricReport>>& rows,
                                 ReportFormat format) {
    require(!rows.empty(), "render_report: need at least one report");
    if (format == ReportFormat::json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& [label, r] : rows) j.push_back(report_json(r, label));
        return j.dump(2) + "\n";
    }
    std::ostringstream os;
    os << "label,tp,fp,fn,tn,accuracy,precision,sensitivity,specificity,f1,npv,fdr,fpr,fnr,for,"
          "fp_cost,fn_cost,total_cost\n";
    for (const auto& [label, r] : rows) {
        os << label << ',' << detail::trim_number(r.cm.tp) << ',' << detail::trim_number(r.cm.fp)
           << ',' << detail::trim_number(r.cm.fn) << ',' << detail::trim_number(r.cm.tn) << ','
           << detail::round4(r.accuracy) << ',' << detail::round4(r.precision) << ','
           << detail::round4(r.sensitivity) << ',' << detail::round4(r.specificity) << ','
           << detail::round4(r.f1) << ',' << detail::round4(r.npv) << ','
           << detail::round4(r.fdr) << ',' << detail::round4(r.fpr) << ','
           << detail::round4(r.fnr) << ',' << detail::round4(r.for_rate) << ','
           << detail::trim_number(r.costs.fp_cost) << ',' << detail::trim_number(r.costs.fn_cost)
           << ',' << detail::trim_number(r.costs.total) << '\n';
    }
    return os.str();
}

}  // namespace cw
