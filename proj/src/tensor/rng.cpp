#include "itcfn/rng.hpp"

#include <cmath>

namespace itcfn {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 is kept away from 0 so the log is finite.
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t Rng::splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
    return uniform_tensor(shape, -bound, bound, rng);
}

Tensor uniform_tensor(const Shape& shape, double lo, double hi, Rng& rng) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return Tensor::from_data(shape, std::move(data));
}

Tensor normal_tensor(const Shape& shape, double stddev, Rng& rng) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = rng.normal() * stddev;
    return Tensor::from_data(shape, std::move(data));
}

}  // namespace itcfn
