#include "dataset/embeddings.hpp"

#include <cmath>

#include "common/binio.hpp"

namespace rawdiff {

namespace {
constexpr char kMagic[] = "RDEM";
constexpr std::uint32_t kVersion = 1;
} // namespace

std::span<const double> EmbeddingFile::row(std::size_t i) const {
    if (i >= count)
        throw UsageError("embedding index " + std::to_string(i) + " out of range (count " + std::to_string(count) + ")");
    return std::span<const double>(vectors).subspan(i * dim, dim);
}

ConditionVector EmbeddingFile::condition(std::size_t i) const {
    const auto r = row(i);
    return ConditionVector::text({r.begin(), r.end()});
}

const char* embedding_error_name(EmbeddingErrorCode code) {
    switch (code) {
    case EmbeddingErrorCode::BadMagic:
        return "bad-magic";
    case EmbeddingErrorCode::BadVersion:
        return "bad-version";
    case EmbeddingErrorCode::Truncated:
        return "truncated";
    case EmbeddingErrorCode::DimMismatch:
        return "dim-mismatch";
    case EmbeddingErrorCode::Empty:
        return "empty";
    case EmbeddingErrorCode::NonFinite:
        return "non-finite";
    case EmbeddingErrorCode::TrailingBytes:
        return "trailing-bytes";
    }
    return "unknown";
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingFile& e) {
    if (e.vectors.size() != e.count * e.dim)
        throw UsageError("embedding file: " + std::to_string(e.vectors.size()) + " values for " +
                         std::to_string(e.count) + "x" + std::to_string(e.dim));
    binio::Writer w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(e.count));
    w.u32(static_cast<std::uint32_t>(e.dim));
    for (double v : e.vectors)
        w.f32(static_cast<float>(v));
    return w.take();
}

EmbeddingFile decode_embeddings(std::span<const std::uint8_t> bytes, std::optional<std::size_t> expected_dim,
                                const std::string& context) {
    auto fail = [&](EmbeddingErrorCode code, const std::string& msg) {
        throw EmbeddingFormatError(code, context + ": " + embedding_error_name(code) + ": " + msg);
    };
    if (bytes.size() < 16)
        fail(bytes.size() >= 4 && std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != kMagic
                 ? EmbeddingErrorCode::BadMagic
                 : EmbeddingErrorCode::Truncated,
             "header needs 16 bytes, file has " + std::to_string(bytes.size()));
    binio::Reader r(bytes, context);
    if (!r.magic(kMagic))
        fail(EmbeddingErrorCode::BadMagic, "expected RDEM");
    if (const auto v = r.u32(); v != kVersion)
        fail(EmbeddingErrorCode::BadVersion, "unsupported version " + std::to_string(v));
    EmbeddingFile e;
    e.count = r.u32();
    e.dim = r.u32();
    if (e.count == 0 || e.dim == 0)
        fail(EmbeddingErrorCode::Empty, "count and dim must be >= 1");
    if (expected_dim && e.dim != *expected_dim)
        fail(EmbeddingErrorCode::DimMismatch,
             "dim " + std::to_string(e.dim) + ", expected " + std::to_string(*expected_dim));
    const std::size_t need = e.count * e.dim * 4;
    if (r.remaining() < need)
        fail(EmbeddingErrorCode::Truncated,
             "need " + std::to_string(need) + " payload bytes, have " + std::to_string(r.remaining()));
    if (r.remaining() > need)
        fail(EmbeddingErrorCode::TrailingBytes, std::to_string(r.remaining() - need) + " unexpected bytes");
    e.vectors.resize(e.count * e.dim);
    for (auto& v : e.vectors) {
        v = r.f32();
        if (!std::isfinite(v))
            fail(EmbeddingErrorCode::NonFinite, "non-finite value");
    }
    return e;
}

void save_embeddings(const std::string& path, const EmbeddingFile& e) {
    binio::write_file(path, encode_embeddings(e));
}

EmbeddingFile load_embeddings(const std::string& path, std::optional<std::size_t> expected_dim) {
    return decode_embeddings(binio::read_file(path), expected_dim, path);
}

} // namespace rawdiff
