#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "denoiser/condition.hpp"

namespace rawdiff {

/// Row-major count x dim matrix of caption embeddings.
struct EmbeddingFile {
    std::size_t count = 0;
    std::size_t dim = 0;
    std::vector<double> vectors;

    std::span<const double> row(std::size_t i) const;
    /// Condition vector for row i; the row must be kConditionDim long.
    ConditionVector condition(std::size_t i) const;
    bool operator==(const EmbeddingFile&) const = default;
};

enum class EmbeddingErrorCode {
    BadMagic = 1,
    BadVersion,
    Truncated,
    DimMismatch,
    Empty,
    NonFinite,
    TrailingBytes,
};

const char* embedding_error_name(EmbeddingErrorCode code);

class EmbeddingFormatError : public DataError {
public:
    EmbeddingFormatError(EmbeddingErrorCode code, const std::string& what) : DataError(what), code_(code) {}
    EmbeddingErrorCode code() const noexcept { return code_; }

private:
    EmbeddingErrorCode code_;
};

/// "RDEM", version u32, count u32, dim u32, count*dim f32 little-endian.
std::vector<std::uint8_t> encode_embeddings(const EmbeddingFile& e);
EmbeddingFile decode_embeddings(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim,
                                const std::string& context = "embedding file");

void save_embeddings(const std::string& path, const EmbeddingFile& e);
/// Text mode passes kConditionDim as `expected_dim`.
EmbeddingFile load_embeddings(const std::string& path, std::optional<std::size_t> expected_dim = kConditionDim);

} // namespace rawdiff
