#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <list>
#include <map>
#include <queue>
#include <stdexcept>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "loti/confidence.hpp"
#include "loti/error.hpp"
#include "loti/loss.hpp"
#include "loti/trace.hpp"

namespace loti {

// Dual = paired small/large models with confidence-gated dispatch and
// cancels; Baseline = one dispatch to the cheapest model meeting the
// requirement, with LRU residency and cold-start swaps.
enum class Policy { Dual, Baseline };
enum class ArrivalProcess { Poisson, Fixed };
enum class RequirementDist { UniformIid, UniformAscending, Fixed };

struct ModelProfile {
    double accuracy = 0.0;
    double service_ms = 0.0;
};

struct SimConfig {
    double edge_delay_ms = 3.0;
    double internet_delay_ms = 10.0;

    LossModel loss_model = LossModel::Bernoulli;
    double loss_rate = 0.0;
    double loss_burst = 4.0;
    int packets_per_image = 110;
    std::vector<double> loss_sweep;  // extra rates for the per-loss-rate table

    double frontend_service_ms = 2.0;
    double backend_service_ms = 10.0;
    bool service_from_trace = false;
    double recovery_delay_ms = 0.2;  // per lossy image, measured from the recover benchmark

    double swap_ratio = 3.0;
    int gpu_memory_slots = 25;

    int num_apps = 25;
    std::vector<ModelProfile> model_set = {{0.70, 4.0}, {0.74, 5.0}, {0.78, 6.5}, {0.82, 8.0}, {0.85, 10.0}};

    ArrivalProcess arrival = ArrivalProcess::Poisson;
    double arrival_rate_per_s = 100.0;
    double arrival_spacing_ms = 10.0;
    RequirementDist req_dist = RequirementDist::UniformIid;
    double req_lo = 0.70;
    double req_hi = 0.85;
    double req_fixed = 0.75;
    int request_count = 10000;

    Policy policy = Policy::Dual;
    bool cancels_enabled = true;
    double cancel_abort_cost_ms = 0.0;

    double frontend_watts = 31.74;
    double backend_watts = 106.0;

    std::uint64_t rng_seed = 0;
    bool seed_set = false;

    void validate() const {
        if (edge_delay_ms < 0 || internet_delay_ms < 0) throw ConfigInvalid("delays must be >= 0");
        if (swap_ratio < 0) throw ConfigInvalid("swap_ratio must be >= 0");
        if (gpu_memory_slots < 1) throw ConfigInvalid("gpu_memory_slots must be >= 1");
        if (request_count < 1) throw ConfigInvalid("request_count must be >= 1");
        if (num_apps < 1) throw ConfigInvalid("num_apps must be >= 1");
        if (model_set.empty()) throw ConfigInvalid("model_set must not be empty");
        if (!std::is_sorted(model_set.begin(), model_set.end(),
                            [](const ModelProfile& a, const ModelProfile& b) { return a.accuracy < b.accuracy; }))
            throw ConfigInvalid("model_set must be sorted by accuracy");
        if (req_lo > req_hi) throw ConfigInvalid("requirement range inverted");
        if (packets_per_image < 1) throw ConfigInvalid("packets_per_image must be >= 1");
        if (!seed_set) throw ConfigInvalid("rng seed is required for reproducible runs");
        if (arrival == ArrivalProcess::Poisson && arrival_rate_per_s <= 0)
            throw ConfigInvalid("arrival rate must be positive");
        if (arrival == ArrivalProcess::Fixed && arrival_spacing_ms <= 0)
            throw ConfigInvalid("arrival spacing must be positive");
    }
};

// --- config file: ini-style sections of key = value pairs ---

namespace detail {

inline std::string trim(std::string s) {
    auto issp = [](unsigned char c) { return c == ' ' || c == '\t'; };
    while (!s.empty() && issp(s.front())) s.erase(s.begin());
    while (!s.empty() && issp(s.back())) s.pop_back();
    return s;
}

inline std::vector<double> parse_double_list(const std::string& v, const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw ConfigInvalid("bad number '" + item + "' for " + key);
        }
    }
    return out;
}

}  // namespace detail

inline SimConfig parse_sim_config(const std::string& text) {
    SimConfig cfg;
    std::vector<double> accs, svcs;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;

    auto bad = [&](const std::string& what) {
        throw ConfigInvalid(what + " (line " + std::to_string(lineno) + ")");
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') bad("unterminated section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) bad("expected key = value");
        std::string key = section + "." + detail::trim(line.substr(0, eq));
        std::string val = detail::trim(line.substr(eq + 1));
        auto num = [&]() {
            try {
                return std::stod(val);
            } catch (...) {
                bad("bad number '" + val + "' for " + key);
                return 0.0;
            }
        };

        if (key == "delays.edge_ms") cfg.edge_delay_ms = num();
        else if (key == "delays.internet_ms") cfg.internet_delay_ms = num();
        else if (key == "loss.model") {
            if (val == "bernoulli") cfg.loss_model = LossModel::Bernoulli;
            else if (val == "gilbert-elliott") cfg.loss_model = LossModel::GilbertElliott;
            else bad("unknown loss model '" + val + "'");
        } else if (key == "loss.rate") cfg.loss_rate = num();
        else if (key == "loss.burst") cfg.loss_burst = num();
        else if (key == "loss.packets_per_image") cfg.packets_per_image = static_cast<int>(num());
        else if (key == "loss.sweep") cfg.loss_sweep = detail::parse_double_list(val, key);
        else if (key == "service.frontend_ms") cfg.frontend_service_ms = num();
        else if (key == "service.backend_ms") cfg.backend_service_ms = num();
        else if (key == "service.from_trace") cfg.service_from_trace = (val == "true" || val == "1");
        else if (key == "service.recovery_delay_ms") cfg.recovery_delay_ms = num();
        else if (key == "backend.swap_ratio") cfg.swap_ratio = num();
        else if (key == "backend.gpu_memory_slots") cfg.gpu_memory_slots = static_cast<int>(num());
        else if (key == "apps.count") cfg.num_apps = static_cast<int>(num());
        else if (key == "apps.model_accuracies") accs = detail::parse_double_list(val, key);
        else if (key == "apps.model_service_ms") svcs = detail::parse_double_list(val, key);
        else if (key == "workload.arrival") {
            if (val == "poisson") cfg.arrival = ArrivalProcess::Poisson;
            else if (val == "fixed") cfg.arrival = ArrivalProcess::Fixed;
            else bad("unknown arrival process '" + val + "'");
        } else if (key == "workload.rate_per_s") cfg.arrival_rate_per_s = num();
        else if (key == "workload.spacing_ms") cfg.arrival_spacing_ms = num();
        else if (key == "workload.requirements") {
            if (val == "uniform") cfg.req_dist = RequirementDist::UniformIid;
            else if (val == "ascending") cfg.req_dist = RequirementDist::UniformAscending;
            else if (val == "fixed") cfg.req_dist = RequirementDist::Fixed;
            else bad("unknown requirement distribution '" + val + "'");
        } else if (key == "workload.req_lo") cfg.req_lo = num();
        else if (key == "workload.req_hi") cfg.req_hi = num();
        else if (key == "workload.req_fixed") cfg.req_fixed = num();
        else if (key == "workload.count") cfg.request_count = static_cast<int>(num());
        else if (key == "policy.kind") {
            if (val == "dual") cfg.policy = Policy::Dual;
            else if (val == "baseline") cfg.policy = Policy::Baseline;
            else bad("unknown policy '" + val + "'");
        } else if (key == "policy.cancels") cfg.cancels_enabled = (val == "true" || val == "1");
        else if (key == "policy.abort_cost_ms") cfg.cancel_abort_cost_ms = num();
        else if (key == "energy.frontend_watts") cfg.frontend_watts = num();
        else if (key == "energy.backend_watts") cfg.backend_watts = num();
        else if (key == "rng.seed") {
            cfg.rng_seed = static_cast<std::uint64_t>(num());
            cfg.seed_set = true;
        } else bad("unknown config key '" + key + "'");
    }

    if (!accs.empty() || !svcs.empty()) {
        if (accs.size() != svcs.size())
            throw ConfigInvalid("model_accuracies and model_service_ms must have equal length");
        cfg.model_set.clear();
        for (std::size_t i = 0; i < accs.size(); ++i) cfg.model_set.push_back({accs[i], svcs[i]});
    }
    return cfg;
}

// --- events ---

enum class EventKind : std::uint8_t {
    Arrival = 0,
    PacketDrop = 1,
    FrontendDone = 2,
    BackendDequeue = 3,
    BackendDone = 4,
    CancelDelivered = 5,
    Timeout = 6,
};

struct Event {
    std::int64_t time_us = 0;
    EventKind kind = EventKind::Arrival;
    std::uint32_t request_id = 0;
    std::int64_t payload = 0;  // job token / packet index
    std::int64_t seq = 0;      // insertion order, final tie break
};

struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
        if (a.time_us != b.time_us) return a.time_us > b.time_us;
        if (a.kind != b.kind) return a.kind > b.kind;
        if (a.request_id != b.request_id) return a.request_id > b.request_id;
        return a.seq > b.seq;
    }
};

// --- workload ---

struct RequestPlan {
    std::int64_t arrival_us = 0;
    std::uint32_t app = 0;
    double requirement = 0.0;
    std::uint32_t image_index = 0;
    int packets_dropped = 0;
    bool header_lost = false;
    double loss_fraction = 0.0;
    double loss_bucket = 0.0;
    std::vector<int> dropped_packets;  // indices, for PacketDrop bookkeeping
};

inline std::vector<double> trace_loss_buckets(const ModelTrace& trace) { return trace.loss_levels(); }

// Seeded, reproducible arrival list. All per-request randomness is drawn
// here in arrival order so event interleaving can never perturb it.
inline std::vector<RequestPlan> gen_workload(const SimConfig& cfg, const ModelTrace& trace) {
    cfg.validate();
    if (trace.rows.empty()) throw EmptyTrace("workload generation needs a trace");

    std::vector<std::string> images;
    {
        std::set<std::string> s;
        for (const auto& r : trace.rows) s.insert(r.image_id);
        images.assign(s.begin(), s.end());
    }
    auto buckets = trace_loss_buckets(trace);

    SimRng arrivals(cfg.rng_seed * 0x9E3779B97F4A7C15ull + 1);
    SimRng reqs(cfg.rng_seed * 0x9E3779B97F4A7C15ull + 2);
    SimRng losses(cfg.rng_seed * 0x9E3779B97F4A7C15ull + 3);
    SimRng picks(cfg.rng_seed * 0x9E3779B97F4A7C15ull + 4);

    std::vector<RequestPlan> plans;
    plans.reserve(static_cast<std::size_t>(cfg.request_count));
    double clock_ms = 0.0;
    for (int i = 0; i < cfg.request_count; ++i) {
        RequestPlan p;
        if (cfg.arrival == ArrivalProcess::Poisson)
            clock_ms += arrivals.expo(1000.0 / cfg.arrival_rate_per_s);
        else
            clock_ms += cfg.arrival_spacing_ms;
        p.arrival_us = static_cast<std::int64_t>(clock_ms * 1000.0);
        p.app = picks.below(static_cast<std::uint32_t>(cfg.num_apps));
        p.image_index = picks.below(static_cast<std::uint32_t>(images.size()));

        switch (cfg.req_dist) {
            case RequirementDist::UniformIid:
                p.requirement = cfg.req_lo + (cfg.req_hi - cfg.req_lo) * reqs.unit();
                break;
            case RequirementDist::UniformAscending:
                p.requirement = cfg.req_lo + (cfg.req_hi - cfg.req_lo) *
                                                 (cfg.request_count == 1
                                                      ? 0.0
                                                      : static_cast<double>(i) / (cfg.request_count - 1));
                break;
            case RequirementDist::Fixed:
                p.requirement = cfg.req_fixed;
                break;
        }

        LossProcess lp(cfg.loss_model, cfg.loss_rate, cfg.loss_burst, losses);
        for (int k = 0; k < cfg.packets_per_image; ++k) {
            if (lp.next()) {
                ++p.packets_dropped;
                p.dropped_packets.push_back(k);
                if (k == 0) p.header_lost = true;  // packet 0 carries the JPEG header
            }
        }
        p.loss_fraction = static_cast<double>(p.packets_dropped) / cfg.packets_per_image;
        p.loss_bucket = buckets.back();
        for (double b : buckets) {
            if (b >= p.loss_fraction) {
                p.loss_bucket = b;
                break;
            }
        }
        plans.push_back(std::move(p));
    }
    return plans;
}

// --- report ---

struct LatencyStats {
    double mean_ms = 0.0;
    double p90_ms = 0.0;
    double p99_ms = 0.0;
    double p100_ms = 0.0;
    std::size_t count = 0;
};

// Nearest-rank percentiles over the sample set.
inline LatencyStats percentiles(std::vector<std::int64_t> samples_us) {
    if (samples_us.empty()) throw Error("percentiles over an empty sample set");
    std::sort(samples_us.begin(), samples_us.end());
    const std::size_t n = samples_us.size();
    auto rank = [&](double k) {
        std::size_t r = static_cast<std::size_t>(std::ceil(k / 100.0 * static_cast<double>(n)));
        if (r == 0) r = 1;
        return samples_us[r - 1];
    };
    LatencyStats s;
    s.count = n;
    long double sum = 0;
    for (auto v : samples_us) sum += v;
    s.mean_ms = static_cast<double>(sum / n) / 1000.0;
    s.p90_ms = static_cast<double>(rank(90)) / 1000.0;
    s.p99_ms = static_cast<double>(rank(99)) / 1000.0;
    s.p100_ms = static_cast<double>(samples_us.back()) / 1000.0;
    return s;
}

struct RequirementBin {
    double requirement = 0.0;
    LatencyStats latency;
};

struct PolicyReport {
    LatencyStats latency;
    double frontend_handled_fraction = 0.0;
    double fallback_fraction = 0.0;
    std::uint64_t swap_count = 0;
    double total_energy_j = 0.0;
    double backend_busy_ms = 0.0;
    std::uint64_t cancels_sent = 0;
    std::uint64_t cancelled_in_queue = 0;
    std::uint64_t cancelled_running = 0;
    std::uint64_t wasted_completions = 0;
    std::uint64_t header_lost_count = 0;
    std::uint64_t packet_drop_events = 0;
    double achieved_accuracy = 0.0;
    std::vector<RequirementBin> per_requirement;
};

// --- simulator core ---

namespace detail {

struct TraceIndex {
    std::map<std::string, std::map<double, const TraceRow*>> by_image;
    std::vector<std::string> images;

    explicit TraceIndex(const ModelTrace& trace) {
        std::set<std::string> s;
        for (const auto& r : trace.rows) {
            by_image[r.image_id][r.loss_level] = &r;
            s.insert(r.image_id);
        }
        images.assign(s.begin(), s.end());
    }

    const TraceRow& row(std::uint32_t image_index, double bucket) const {
        const auto& id = images.at(image_index);
        auto it = by_image.find(id);
        if (it == by_image.end()) throw TraceMiss("image " + id + " absent from trace");
        auto jt = it->second.find(bucket);
        if (jt == it->second.end())
            throw TraceMiss("image " + id + " has no loss bucket " + std::to_string(bucket));
        return *jt->second;
    }
};

// Single FIFO server with LRU model residency and cold-start swap costs.
class BackendServer {
public:
    BackendServer(int slots, double swap_ratio) : slots_(static_cast<std::size_t>(slots)), swap_ratio_(swap_ratio) {}

    std::deque<std::uint32_t> queue;
    bool busy = false;
    std::uint32_t running_request = 0;
    std::int64_t running_token = -1;
    std::int64_t run_started_us = 0;
    std::int64_t run_ends_us = 0;

    std::uint64_t swap_count = 0;
    std::int64_t busy_us = 0;

    // Returns the total occupancy (swap + service) for the job.
    std::int64_t admit(std::uint64_t model_key, std::int64_t service_us) {
        std::int64_t total = service_us;
        auto it = resident_.find(model_key);
        if (it != resident_.end()) {
            lru_.splice(lru_.begin(), lru_, it->second);
        } else {
            total += static_cast<std::int64_t>(swap_ratio_ * static_cast<double>(service_us));
            ++swap_count;
            if (lru_.size() == slots_) {
                resident_.erase(lru_.back());
                lru_.pop_back();
            }
            lru_.push_front(model_key);
            resident_[model_key] = lru_.begin();
        }
        return total;
    }

private:
    std::size_t slots_;
    double swap_ratio_;
    std::list<std::uint64_t> lru_;
    std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> resident_;
};

}  // namespace detail

// Deterministic discrete-event run of one policy. Identical (config, seed,
// trace, table) inputs give identical reports.
inline PolicyReport run(const SimConfig& cfg, const CalibrationTable& table, const ModelTrace& trace) {
    cfg.validate();
    const auto plans = gen_workload(cfg, trace);
    detail::TraceIndex index(trace);

    const std::int64_t edge_us = static_cast<std::int64_t>(cfg.edge_delay_ms * 1000);
    const std::int64_t inet_us = static_cast<std::int64_t>(cfg.internet_delay_ms * 1000);
    const std::int64_t recovery_us = static_cast<std::int64_t>(cfg.recovery_delay_ms * 1000);
    const std::int64_t abort_us = static_cast<std::int64_t>(cfg.cancel_abort_cost_ms * 1000);

    struct RequestState {
        bool terminal = false;
        bool frontend_answered = false;
        bool cancelled = false;
        bool in_backend_queue = false;
        bool backend_completed = false;
        std::int64_t latency_us = -1;
        std::int64_t service_us = 0;   // backend service for this request
        std::uint64_t model_key = 0;
        int correct = 0;
    };
    std::vector<RequestState> req(plans.size());

    // Per-request backend model + service time, fixed up front.
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& p = plans[i];
        const auto& zero_row = index.row(p.image_index, 0.0);
        if (cfg.policy == Policy::Dual) {
            req[i].model_key = std::uint64_t{p.app} * 16 + 15;  // the app's large model
            double svc = cfg.service_from_trace && zero_row.back_latency_ms
                             ? *zero_row.back_latency_ms
                             : cfg.backend_service_ms;
            req[i].service_us = static_cast<std::int64_t>(svc * 1000);
        } else {
            std::size_t pick = cfg.model_set.size() - 1;
            for (std::size_t m = 0; m < cfg.model_set.size(); ++m) {
                if (cfg.model_set[m].accuracy >= p.requirement) {
                    pick = m;
                    break;
                }
            }
            req[i].model_key = std::uint64_t{p.app} * 16 + pick;
            req[i].service_us = static_cast<std::int64_t>(cfg.model_set[pick].service_ms * 1000);
        }
    }

    std::priority_queue<Event, std::vector<Event>, EventAfter> pq;
    std::int64_t seq = 0;
    auto push = [&](std::int64_t t, EventKind k, std::uint32_t r, std::int64_t payload = 0) {
        pq.push({t, k, r, payload, seq++});
    };

    PolicyReport rep;
    detail::BackendServer server(cfg.gpu_memory_slots, cfg.swap_ratio);
    std::int64_t next_token = 0;
    std::uint64_t terminals = 0;

    for (std::uint32_t i = 0; i < plans.size(); ++i) {
        push(plans[i].arrival_us, EventKind::Arrival, i);
        for (int k : plans[i].dropped_packets)
            push(plans[i].arrival_us, EventKind::PacketDrop, i, k);
    }

    auto start_next_job = [&](std::int64_t now) {
        while (!server.busy && !server.queue.empty()) {
            std::uint32_t r = server.queue.front();
            server.queue.pop_front();
            req[r].in_backend_queue = false;
            if (req[r].cancelled) {
                ++rep.cancelled_in_queue;
                continue;
            }
            std::int64_t total = server.admit(req[r].model_key, req[r].service_us);
            server.busy = true;
            server.running_request = r;
            server.running_token = next_token++;
            server.run_started_us = now;
            server.run_ends_us = now + total;
            push(server.run_ends_us, EventKind::BackendDone, r, server.running_token);
        }
    };

    auto record_terminal = [&](std::uint32_t r, std::int64_t latency) {
        req[r].terminal = true;
        req[r].latency_us = latency;
        ++terminals;
    };

    std::int64_t now = 0;
    while (!pq.empty()) {
        Event ev = pq.top();
        pq.pop();
        if (ev.time_us < now) throw std::logic_error("event time went backwards");
        now = ev.time_us;
        const auto& plan = plans[ev.request_id];
        auto& st = req[ev.request_id];

        switch (ev.kind) {
            case EventKind::Arrival: {
                // duplicate dispatch: frontend over the lossy edge path,
                // backend over the reliable internet path
                if (cfg.policy == Policy::Dual) {
                    std::int64_t fs;
                    if (cfg.service_from_trace) {
                        const auto& row = index.row(plan.image_index, plan.loss_bucket);
                        fs = static_cast<std::int64_t>(
                            row.front_latency_ms.value_or(cfg.frontend_service_ms) * 1000);
                    } else {
                        fs = static_cast<std::int64_t>(cfg.frontend_service_ms * 1000);
                    }
                    std::int64_t rec = plan.packets_dropped > 0 ? recovery_us : 0;
                    push(now + edge_us + rec + fs, EventKind::FrontendDone, ev.request_id);
                }
                push(now + inet_us, EventKind::BackendDequeue, ev.request_id, /*enqueue=*/1);
                break;
            }
            case EventKind::PacketDrop:
                ++rep.packet_drop_events;
                break;
            case EventKind::FrontendDone: {
                if (st.terminal) break;  // backend already answered
                bool answer = false;
                double threshold = 0.0;
                if (plan.header_lost) {
                    ++rep.header_lost_count;
                } else {
                    const auto& row = index.row(plan.image_index, plan.loss_bucket);
                    try {
                        auto d = arbitrate(row.front_confidence, plan.requirement, table, plan.loss_bucket);
                        answer = d.frontend();
                        threshold = d.threshold_used;
                    } catch (const UnsatisfiableRequirement&) {
                        answer = false;  // best effort: let the backend answer
                    }
                    (void)threshold;
                }
                if (answer) {
                    st.frontend_answered = true;
                    record_terminal(ev.request_id, (now - plan.arrival_us) + edge_us);
                    st.correct = index.row(plan.image_index, plan.loss_bucket).front_correct;
                    if (cfg.cancels_enabled) {
                        ++rep.cancels_sent;
                        push(now + inet_us, EventKind::CancelDelivered, ev.request_id);
                    }
                }
                break;
            }
            case EventKind::BackendDequeue: {
                if (ev.payload == 1) {  // arrival at the backend
                    if (st.cancelled) {
                        ++rep.cancelled_in_queue;  // cancel raced ahead of the data
                        break;
                    }
                    server.queue.push_back(ev.request_id);
                    st.in_backend_queue = true;
                }
                start_next_job(now);
                break;
            }
            case EventKind::BackendDone: {
                if (!server.busy || server.running_token != ev.payload)
                    break;  // job was aborted; stale completion
                server.busy = false;
                server.busy_us += now - server.run_started_us;
                server.running_token = -1;
                st.backend_completed = true;
                if (!st.terminal) {
                    record_terminal(ev.request_id, (now - plan.arrival_us) + inet_us);
                    st.correct = index.row(plan.image_index, 0.0).back_correct;
                } else {
                    ++rep.wasted_completions;  // cancel lost the race
                }
                start_next_job(now);
                break;
            }
            case EventKind::CancelDelivered: {
                st.cancelled = true;
                if (server.busy && server.running_request == ev.request_id) {
                    server.busy = false;
                    server.busy_us += now - server.run_started_us;
                    server.running_token = -1;
                    ++rep.cancelled_running;
                    push(now + abort_us, EventKind::BackendDequeue, ev.request_id, 0);
                }
                // queued jobs are skipped lazily at dequeue time
                break;
            }
            case EventKind::Timeout:
                break;
        }
    }

    if (terminals != plans.size())
        throw std::logic_error("conservation violated: not every request resolved");

    // metrics
    std::vector<std::int64_t> samples;
    samples.reserve(plans.size());
    std::uint64_t frontend_count = 0;
    double correct_sum = 0;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        samples.push_back(req[i].latency_us);
        if (req[i].frontend_answered) ++frontend_count;
        correct_sum += req[i].correct;
    }
    rep.latency = percentiles(samples);
    rep.frontend_handled_fraction = static_cast<double>(frontend_count) / static_cast<double>(plans.size());
    rep.fallback_fraction = 1.0 - rep.frontend_handled_fraction;
    rep.swap_count = server.swap_count;
    rep.backend_busy_ms = static_cast<double>(server.busy_us) / 1000.0;
    rep.achieved_accuracy = cfg.policy == Policy::Dual
                                ? correct_sum / static_cast<double>(plans.size())
                                : 0.0;

    // energy: frontend runs on every dual-dispatch request; backend energy
    // follows actual busy time (swaps included, aborts truncated)
    double frontend_ms_total = 0.0;
    if (cfg.policy == Policy::Dual) {
        for (std::size_t i = 0; i < plans.size(); ++i) {
            if (cfg.service_from_trace) {
                const auto& row = index.row(plans[i].image_index, plans[i].loss_bucket);
                frontend_ms_total += row.front_latency_ms.value_or(cfg.frontend_service_ms);
            } else {
                frontend_ms_total += cfg.frontend_service_ms;
            }
        }
    }
    rep.total_energy_j =
        cfg.frontend_watts * frontend_ms_total / 1000.0 + cfg.backend_watts * rep.backend_busy_ms / 1000.0;

    // per-requirement latency curve over the calibration grid
    std::vector<double> grid;
    if (!table.buckets.empty())
        for (const auto& e : table.buckets.front().entries) grid.push_back(e.requirement);
    if (grid.empty()) grid = {cfg.req_hi};
    std::vector<std::vector<std::int64_t>> bins(grid.size());
    for (std::size_t i = 0; i < plans.size(); ++i) {
        std::size_t g = grid.size() - 1;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (grid[k] >= plans[i].requirement) {
                g = k;
                break;
            }
        }
        bins[g].push_back(req[i].latency_us);
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (bins[k].empty()) continue;
        RequirementBin b;
        b.requirement = grid[k];
        b.latency = percentiles(bins[k]);
        rep.per_requirement.push_back(b);
    }
    return rep;
}

// --- report serialization ---

inline nlohmann::ordered_json latency_json(const LatencyStats& s) {
    return {{"mean_ms", s.mean_ms},
            {"p90_ms", s.p90_ms},
            {"p99_ms", s.p99_ms},
            {"p100_ms", s.p100_ms},
            {"count", s.count}};
}

inline nlohmann::ordered_json policy_report_json(const PolicyReport& r) {
    nlohmann::ordered_json j;
    j["latency"] = latency_json(r.latency);
    j["frontend_handled_fraction"] = r.frontend_handled_fraction;
    j["fallback_fraction"] = r.fallback_fraction;
    j["swap_count"] = r.swap_count;
    j["total_energy_j"] = r.total_energy_j;
    j["backend_busy_ms"] = r.backend_busy_ms;
    j["cancels_sent"] = r.cancels_sent;
    j["cancelled_in_queue"] = r.cancelled_in_queue;
    j["cancelled_running"] = r.cancelled_running;
    j["wasted_completions"] = r.wasted_completions;
    j["header_lost_count"] = r.header_lost_count;
    j["packet_drop_events"] = r.packet_drop_events;
    j["achieved_accuracy"] = r.achieved_accuracy;
    j["per_requirement"] = nlohmann::ordered_json::array();
    for (const auto& b : r.per_requirement)
        j["per_requirement"].push_back({{"requirement", b.requirement}, {"latency", latency_json(b.latency)}});
    return j;
}

}  // namespace loti
