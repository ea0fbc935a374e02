#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace amq {

// Deterministic uniform/normal stream from raw mt19937_64 words, so sampled
// values do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t raw() { return state_(); }
    double u01() { return double(state_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    // Box-Muller; one fresh pair of uniforms per call.
    double normal() {
        double u1 = u01();
        while (u1 <= 0.0) u1 = u01();
        const double u2 = u01();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Fisher-Yates; used by the random-assignment ablation.
    template <typename V>
    void shuffle(V& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(state_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << state_;
        return os.str();
    }
    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> state_;
        if (is.fail()) throw std::invalid_argument("Rng: bad serialized state");
    }

private:
    std::mt19937_64 state_;
};

}  // namespace amq
