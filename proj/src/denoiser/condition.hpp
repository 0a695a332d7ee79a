#pragma once

#include <vector>

#include "tensor/tensor.hpp"

namespace rawdiff {

inline constexpr std::size_t kConditionDim = 768;

/// Text embedding fed to the denoiser, or the null marker used with the
/// unconditioned variant (which substitutes its own trainable vector).
struct ConditionVector {
    enum class Kind { Text, Null };

    Kind kind = Kind::Null;
    std::vector<double> values;

    static ConditionVector text(std::vector<double> v);
    static ConditionVector null() { return {}; }

    bool is_null() const { return kind == Kind::Null; }
    Tensor as_tensor() const { return Tensor({values.size()}, values); }
};

} // namespace rawdiff
