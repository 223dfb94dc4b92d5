#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "loti/csv.hpp"
#include "loti/digest.hpp"
#include "loti/error.hpp"

namespace loti {

// One calibration observation: how the frontend model did on an image at a
// given MCU-loss level, and how the backend did on the intact image.
struct TraceRow {
    std::string image_id;
    double loss_level = 0.0;        // MCU loss fraction bucket
    double front_confidence = 0.0;  // n-th highest softmax probability
    int front_correct = 0;
    int back_correct = 0;
    std::optional<double> front_latency_ms;
    std::optional<double> back_latency_ms;
};

struct ModelTrace {
    std::vector<TraceRow> rows;

    std::vector<double> loss_levels() const {
        std::set<double> s;
        for (const auto& r : rows) s.insert(r.loss_level);
        return {s.begin(), s.end()};
    }

    std::vector<const TraceRow*> rows_at(double loss_level) const {
        std::vector<const TraceRow*> out;
        for (const auto& r : rows)
            if (r.loss_level == loss_level) out.push_back(&r);
        return out;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(12);
        bool latency = !rows.empty() && rows.front().front_latency_ms.has_value();
        os << "image_id,loss_level,front_confidence,front_correct,back_correct";
        if (latency) os << ",front_latency_ms,back_latency_ms";
        os << "\n";
        for (const auto& r : rows) {
            os << r.image_id << ',' << r.loss_level << ',' << r.front_confidence << ','
               << r.front_correct << ',' << r.back_correct;
            if (latency)
                os << ',' << r.front_latency_ms.value_or(0) << ',' << r.back_latency_ms.value_or(0);
            os << "\n";
        }
        return os.str();
    }

    // Digest of the canonical CSV serialization; recorded as calibration
    // provenance so a table names the trace it came from.
    std::string digest() const { return fnv64_hex(to_csv()); }
};

inline ModelTrace load_trace_csv(const std::string& path) {
    auto lines = csv::read_lines(path);
    if (lines.empty()) throw EmptyTrace("trace file " + path + " is empty");
    auto header = csv::split(lines[0]);
    if (header.size() < 5 || header[0] != "image_id")
        throw Error("unexpected trace header in " + path);
    bool latency = header.size() >= 7;

    ModelTrace t;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto f = csv::split(lines[i]);
        if (f.size() < 5) throw Error("short trace row at line " + std::to_string(i + 1));
        TraceRow r;
        r.image_id = std::string(f[0]);
        r.loss_level = csv::to_double(f[1], path);
        r.front_confidence = csv::to_double(f[2], path);
        r.front_correct = static_cast<int>(csv::to_long(f[3], path));
        r.back_correct = static_cast<int>(csv::to_long(f[4], path));
        if (latency && f.size() >= 7) {
            r.front_latency_ms = csv::to_double(f[5], path);
            r.back_latency_ms = csv::to_double(f[6], path);
        }
        t.rows.push_back(std::move(r));
    }
    if (t.rows.empty()) throw EmptyTrace("trace file " + path + " has no rows");
    return t;
}

// --- prediction dumps (bring-your-own-model input) ---

// CSV: image_id,loss_level,label,p1,l1,...,pk,lk with probabilities in
// descending order; `label` is the ground truth for the image.
struct PredRow {
    std::string image_id;
    double loss_level = 0.0;
    std::uint32_t truth = 0;
    std::vector<std::pair<double, std::uint32_t>> topk;  // (probability, label)
};

struct PredictionDump {
    std::vector<PredRow> rows;
};

inline PredictionDump load_prediction_dump(const std::string& path) {
    PredictionDump d;
    auto lines = csv::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i == 0 && lines[i].rfind("image_id", 0) == 0) continue;  // header
        auto f = csv::split(lines[i]);
        if (f.size() < 5 || (f.size() - 3) % 2 != 0)
            throw Error("bad prediction row at line " + std::to_string(i + 1) + " of " + path);
        PredRow r;
        r.image_id = std::string(f[0]);
        r.loss_level = csv::to_double(f[1], path);
        r.truth = static_cast<std::uint32_t>(csv::to_long(f[2], path));
        for (std::size_t k = 3; k + 1 < f.size(); k += 2)
            r.topk.emplace_back(csv::to_double(f[k], path),
                                static_cast<std::uint32_t>(csv::to_long(f[k + 1], path)));
        d.rows.push_back(std::move(r));
    }
    return d;
}

// Join frontend and backend prediction dumps into a ModelTrace. Confidence
// is the n-th highest frontend probability; correctness is truth-in-top-n.
// The backend sees the intact image, so its row is looked up at the same
// loss level when present and at loss 0 otherwise.
inline ModelTrace build_trace(const PredictionDump& front, const PredictionDump& back, int n) {
    if (n < 1) throw Error("top-n must be at least 1");
    if (front.rows.empty()) throw EmptyTrace("frontend dump is empty");

    auto key = [](const std::string& id, double l) { return id + "@" + std::to_string(l); };
    std::map<std::string, const PredRow*> back_by_key;
    for (const auto& r : back.rows) back_by_key[key(r.image_id, r.loss_level)] = &r;

    auto correct_top_n = [&](const PredRow& r) {
        for (int i = 0; i < n && i < static_cast<int>(r.topk.size()); ++i)
            if (r.topk[i].second == r.truth) return 1;
        return 0;
    };

    ModelTrace t;
    for (const auto& fr : front.rows) {
        if (static_cast<int>(fr.topk.size()) < n)
            throw ShortVector("row " + fr.image_id + " carries only " +
                              std::to_string(fr.topk.size()) + " predictions, need " + std::to_string(n));
        const PredRow* br = nullptr;
        if (auto it = back_by_key.find(key(fr.image_id, fr.loss_level)); it != back_by_key.end())
            br = it->second;
        else if (auto it0 = back_by_key.find(key(fr.image_id, 0.0)); it0 != back_by_key.end())
            br = it0->second;
        if (!br)
            throw IdMismatch("image " + fr.image_id + " missing from backend dump");
        if (br->truth != fr.truth)
            throw IdMismatch("ground truth differs between dumps for image " + fr.image_id);

        TraceRow row;
        row.image_id = fr.image_id;
        row.loss_level = fr.loss_level;
        row.front_confidence = fr.topk[static_cast<std::size_t>(n) - 1].first;
        row.front_correct = correct_top_n(fr);
        row.back_correct = [&] {
            for (int i = 0; i < n && i < static_cast<int>(br->topk.size()); ++i)
                if (br->topk[i].second == br->truth) return 1;
            return 0;
        }();
        t.rows.push_back(std::move(row));
    }
    return t;
}

// Ground-truth file: CSV image_id,label. The dumps embed the same truth per
// row; this overload cross-checks them against the authoritative list.
using Labels = std::map<std::string, std::uint32_t>;

inline Labels load_labels(const std::string& path) {
    Labels out;
    auto lines = csv::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i == 0 && lines[i].rfind("image_id", 0) == 0) continue;
        auto f = csv::split(lines[i]);
        if (f.size() != 2) throw Error("bad label row at line " + std::to_string(i + 1) + " of " + path);
        out[std::string(f[0])] = static_cast<std::uint32_t>(csv::to_long(f[1], path));
    }
    return out;
}

inline ModelTrace build_trace(const PredictionDump& front, const PredictionDump& back,
                              const Labels& labels, int n) {
    for (const auto& r : front.rows) {
        auto it = labels.find(r.image_id);
        if (it == labels.end())
            throw IdMismatch("image " + r.image_id + " missing from ground truth");
        if (it->second != r.truth)
            throw IdMismatch("dump truth differs from ground truth for image " + r.image_id);
    }
    return build_trace(front, back, n);
}

// --- validation ---

struct TraceViolation {
    std::string kind;
    std::string detail;
};

inline std::vector<TraceViolation> validate_trace(const ModelTrace& t) {
    std::vector<TraceViolation> v;
    std::set<std::pair<std::string, double>> seen;
    std::set<std::string> ids;
    std::set<std::string> ids_at_zero;
    for (const auto& r : t.rows) {
        ids.insert(r.image_id);
        if (r.loss_level == 0.0) ids_at_zero.insert(r.image_id);
        if (!seen.insert({r.image_id, r.loss_level}).second)
            v.push_back({"duplicate_row", r.image_id + " at loss " + std::to_string(r.loss_level)});
        if (r.front_confidence < 0.0 || r.front_confidence > 1.0)
            v.push_back({"confidence_range", r.image_id + " confidence " + std::to_string(r.front_confidence)});
        if (r.front_correct != 0 && r.front_correct != 1)
            v.push_back({"front_correct_range", r.image_id});
        if (r.back_correct != 0 && r.back_correct != 1)
            v.push_back({"back_correct_range", r.image_id});
        if (r.loss_level < 0.0 || r.loss_level > 1.0)
            v.push_back({"loss_level_range", r.image_id});
    }
    for (const auto& id : ids)
        if (!ids_at_zero.count(id))
            v.push_back({"missing_zero_loss_row", id});
    return v;
}

// Mean confidence of correct vs incorrect frontend answers, per loss level.
// Healthy traces separate; reported rather than asserted on user data.
struct SeparationStat {
    double loss_level = 0.0;
    double mean_conf_correct = 0.0;
    double mean_conf_incorrect = 0.0;
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
};

inline std::vector<SeparationStat> separation_stats(const ModelTrace& t) {
    std::vector<SeparationStat> out;
    for (double l : t.loss_levels()) {
        SeparationStat s;
        s.loss_level = l;
        double sum_c = 0, sum_i = 0;
        for (const auto* r : t.rows_at(l)) {
            if (r->front_correct) {
                sum_c += r->front_confidence;
                ++s.n_correct;
            } else {
                sum_i += r->front_confidence;
                ++s.n_incorrect;
            }
        }
        if (s.n_correct) s.mean_conf_correct = sum_c / static_cast<double>(s.n_correct);
        if (s.n_incorrect) s.mean_conf_incorrect = sum_i / static_cast<double>(s.n_incorrect);
        out.push_back(s);
    }
    return out;
}

}  // namespace loti
