#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "itcfn/tensor.hpp"

namespace itcfn {

// Seeded generator with distribution code written out explicitly so streams
// are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    // Uniform integer in [0, n).
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    // Derives an independent child seed; used to give each component its own stream.
    std::uint64_t fork_seed() { return splitmix(engine_()); }

    static std::uint64_t splitmix(std::uint64_t x);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Kaiming-uniform initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)) scaled by gain.
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain = 1.0);
Tensor uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng);
Tensor normal_tensor(const Shape& shape, double stddev, Rng& rng);

}  // namespace itcfn
