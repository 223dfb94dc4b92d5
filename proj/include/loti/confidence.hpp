#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "loti/error.hpp"
#include "loti/trace.hpp"

namespace loti {

// Threshold that routes every request to the backend: strictly above any
// confidence in [0, 1].
inline double all_backend_threshold() { return std::nextafter(1.0, 2.0); }

// End-to-end accuracy when the frontend answers every row with confidence
// >= t and the backend answers the rest.
inline double combined_accuracy(const std::vector<const TraceRow*>& rows, double t) {
    if (rows.empty()) throw EmptyTrace("combined_accuracy over empty row set");
    long hits = 0;
    for (const auto* r : rows) hits += (r->front_confidence >= t) ? r->front_correct : r->back_correct;
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

inline double combined_accuracy(const ModelTrace& trace, double loss_level, double t) {
    return combined_accuracy(trace.rows_at(loss_level), t);
}

struct CalibrationEntry {
    double requirement = 0.0;   // accuracy the caller asked for
    double threshold = 0.0;     // smallest t meeting it on the calibration trace
    bool satisfiable = true;
    double predicted_frontend_fraction = 0.0;
    double predicted_accuracy = 0.0;
};

struct CalibrationBucket {
    double loss_level = 0.0;
    std::vector<CalibrationEntry> entries;  // ascending by requirement
};

struct CalibrationTable {
    std::vector<CalibrationBucket> buckets;  // ascending by loss_level
    std::string provenance;                  // digest of the calibration trace

    const CalibrationBucket& bucket_for(double loss_level) const {
        if (buckets.empty()) throw EmptyTrace("calibration table has no buckets");
        for (const auto& b : buckets)
            if (b.loss_level >= loss_level) return b;
        return buckets.back();
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["provenance"] = provenance;
        j["buckets"] = nlohmann::ordered_json::array();
        for (const auto& b : buckets) {
            nlohmann::ordered_json jb;
            jb["loss_level"] = b.loss_level;
            jb["entries"] = nlohmann::ordered_json::array();
            for (const auto& e : b.entries) {
                jb["entries"].push_back({{"requirement", e.requirement},
                                         {"threshold", e.threshold},
                                         {"satisfiable", e.satisfiable},
                                         {"predicted_frontend_fraction", e.predicted_frontend_fraction},
                                         {"predicted_accuracy", e.predicted_accuracy}});
            }
            j["buckets"].push_back(jb);
        }
        return j;
    }

    static CalibrationTable from_json(const nlohmann::json& j) {
        CalibrationTable t;
        t.provenance = j.value("provenance", "");
        for (const auto& jb : j.at("buckets")) {
            CalibrationBucket b;
            b.loss_level = jb.at("loss_level").get<double>();
            for (const auto& je : jb.at("entries")) {
                CalibrationEntry e;
                e.requirement = je.at("requirement").get<double>();
                e.threshold = je.at("threshold").get<double>();
                e.satisfiable = je.at("satisfiable").get<bool>();
                e.predicted_frontend_fraction = je.at("predicted_frontend_fraction").get<double>();
                e.predicted_accuracy = je.at("predicted_accuracy").get<double>();
                b.entries.push_back(e);
            }
            t.buckets.push_back(std::move(b));
        }
        return t;
    }
};

// Exact threshold search: candidates are 0, every distinct confidence, and
// the all-backend sentinel. Sorted rows plus prefix sums make each candidate
// O(1); the smallest satisfying candidate maximizes the frontend-handled
// fraction because the handled set only shrinks as t grows.
inline CalibrationTable calibrate(const ModelTrace& trace, std::vector<double> requirements) {
    if (trace.rows.empty()) throw EmptyTrace("calibrate needs a nonempty trace");
    std::sort(requirements.begin(), requirements.end());
    requirements.erase(std::unique(requirements.begin(), requirements.end()), requirements.end());

    CalibrationTable table;
    table.provenance = trace.digest();

    for (double level : trace.loss_levels()) {
        auto rows = trace.rows_at(level);
        const std::size_t n = rows.size();
        std::sort(rows.begin(), rows.end(), [](const TraceRow* a, const TraceRow* b) {
            return a->front_confidence < b->front_confidence;
        });
        // prefix over rows sorted ascending by confidence
        std::vector<long> pre_front(n + 1, 0), pre_back(n + 1, 0);
        for (std::size_t i = 0; i < n; ++i) {
            pre_front[i + 1] = pre_front[i] + rows[i]->front_correct;
            pre_back[i + 1] = pre_back[i] + rows[i]->back_correct;
        }
        const long front_total = pre_front[n];

        // candidate thresholds ascending; k(t) = rows below t
        std::vector<double> candidates{0.0};
        for (std::size_t i = 0; i < n; ++i)
            if (i == 0 || rows[i]->front_confidence != rows[i - 1]->front_confidence)
                candidates.push_back(rows[i]->front_confidence);
        candidates.push_back(all_backend_threshold());

        struct Eval {
            double accuracy;
            double frontend_fraction;
        };
        auto eval = [&](double t) -> Eval {
            std::size_t k = static_cast<std::size_t>(
                std::lower_bound(rows.begin(), rows.end(), t,
                                 [](const TraceRow* r, double v) { return r->front_confidence < v; }) -
                rows.begin());
            long hits = (front_total - pre_front[k]) + pre_back[k];
            return {static_cast<double>(hits) / static_cast<double>(n),
                    static_cast<double>(n - k) / static_cast<double>(n)};
        };

        CalibrationBucket bucket;
        bucket.loss_level = level;
        for (double a : requirements) {
            CalibrationEntry e;
            e.requirement = a;
            e.satisfiable = false;
            for (double t : candidates) {
                auto ev = eval(t);
                if (ev.accuracy >= a) {
                    e.threshold = t;
                    e.satisfiable = true;
                    e.predicted_frontend_fraction = ev.frontend_fraction;
                    e.predicted_accuracy = ev.accuracy;
                    break;
                }
            }
            if (!e.satisfiable) {
                auto ev = eval(all_backend_threshold());
                e.threshold = all_backend_threshold();
                e.predicted_frontend_fraction = 0.0;
                e.predicted_accuracy = ev.accuracy;
            }
            bucket.entries.push_back(e);
        }
        table.buckets.push_back(std::move(bucket));
    }
    return table;
}

struct ArbiterDecision {
    enum class Kind { FrontendAnswer, Fallback } kind = Kind::Fallback;
    double threshold_used = 0.0;

    bool frontend() const { return kind == Kind::FrontendAnswer; }
};

// Request-level decision: answer from the frontend iff its confidence
// reaches the threshold for the (requirement, loss bucket) pair. Unknown
// requirements resolve to the nearest entry at or above (conservative).
inline ArbiterDecision arbitrate(double front_confidence, double requirement,
                                 const CalibrationTable& table, double loss_level = 0.0) {
    const auto& bucket = table.bucket_for(loss_level);
    const CalibrationEntry* chosen = nullptr;
    for (const auto& e : bucket.entries) {
        if (e.requirement >= requirement) {
            chosen = &e;
            break;
        }
    }
    if (!chosen)
        throw UnsatisfiableRequirement("no table entry covers accuracy requirement " +
                                       std::to_string(requirement));
    if (!chosen->satisfiable)
        throw UnsatisfiableRequirement("requirement " + std::to_string(chosen->requirement) +
                                       " is unsatisfiable on the calibration trace");
    ArbiterDecision d;
    d.threshold_used = chosen->threshold;
    d.kind = front_confidence >= chosen->threshold ? ArbiterDecision::Kind::FrontendAnswer
                                                   : ArbiterDecision::Kind::Fallback;
    return d;
}

}  // namespace loti
