#include "denoiser/condition.hpp"

#include <cmath>

#include "common/error.hpp"

namespace rawdiff {

ConditionVector ConditionVector::text(std::vector<double> v) {
    if (v.size() != kConditionDim)
        throw UsageError("condition vector must have " + std::to_string(kConditionDim) + " values, got " +
                         std::to_string(v.size()));
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError("condition vector contains non-finite values");
    return {Kind::Text, std::move(v)};
}

} // namespace rawdiff
