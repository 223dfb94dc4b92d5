#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "loti/error.hpp"

namespace loti {

// Deterministic RNG helpers; doubles are built from explicit bit mapping so
// identical seeds always replay identical streams.
class SimRng {
public:
    explicit SimRng(std::uint64_t seed) : eng_(seed) {}
    std::uint64_t u64() { return eng_(); }
    std::uint32_t below(std::uint32_t n) { return static_cast<std::uint32_t>(eng_() % n); }
    double unit() { return static_cast<double>(eng_() >> 11) * 0x1p-53; }
    double expo(double mean) { return -std::log1p(-unit()) * mean; }

private:
    std::mt19937_64 eng_;
};

enum class LossModel { Bernoulli, GilbertElliott };

// Per-packet drop sequence. Gilbert-Elliott is the two-state chain with a
// lossy bad state; (rate, burst) map to the transition probabilities via
// the stationary distribution and mean burst length.
class LossProcess {
public:
    LossProcess(LossModel model, double rate, double burst, SimRng& rng)
        : model_(model), rate_(rate), rng_(rng) {
        if (rate < 0.0 || rate >= 1.0) throw ConfigInvalid("loss rate must be in [0, 1)");
        if (model_ == LossModel::GilbertElliott) {
            if (burst < 1.0) throw ConfigInvalid("mean burst length must be >= 1");
            p_bg_ = 1.0 / burst;
            p_gb_ = rate > 0.0 ? rate * p_bg_ / (1.0 - rate) : 0.0;
            bad_ = rng_.unit() < rate;  // stationary start
        }
    }

    bool next() {
        if (rate_ <= 0.0) return false;
        if (model_ == LossModel::Bernoulli) return rng_.unit() < rate_;
        bool dropped = bad_;
        bad_ = bad_ ? (rng_.unit() >= p_bg_) : (rng_.unit() < p_gb_);
        return dropped;
    }

private:
    LossModel model_;
    double rate_;
    double p_gb_ = 0.0;
    double p_bg_ = 1.0;
    bool bad_ = false;
    SimRng& rng_;
};

}  // namespace loti
