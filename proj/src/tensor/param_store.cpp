#include "tensor/param_store.hpp"

#include "common/binio.hpp"
#include "common/error.hpp"

namespace rawdiff {

namespace {
constexpr char kMagic[] = "RDWT";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;
} // namespace

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (name.empty())
        throw UsageError("parameter name must not be empty");
    if (!entries_.emplace(name, Entry{std::move(value), trainable}).second)
        throw UsageError("duplicate parameter '" + name + "'");
}

void ParamStore::set(const std::string& name, Tensor value) {
    auto& e = get_mut(name);
    if (e.shape() != value.shape())
        throw UsageError("parameter '" + name + "' shape " + shape_string(e.shape()) + " cannot take " +
                         shape_string(value.shape()));
    e = std::move(value);
}

void ParamStore::erase(const std::string& name) {
    if (entries_.erase(name) == 0)
        throw UsageError("unknown parameter '" + name + "'");
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw UsageError("unknown parameter '" + name + "'");
    return it->second.value;
}

Tensor& ParamStore::get_mut(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw UsageError("unknown parameter '" + name + "'");
    return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw UsageError("unknown parameter '" + name + "'");
    return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    auto it = entries_.find(name);
    if (it == entries_.end())
        throw UsageError("unknown parameter '" + name + "'");
    it->second.trainable = trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_)
        out.push_back(name);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [name, e] : entries_)
        if (e.trainable)
            out.push_back(name);
    return out;
}

std::size_t ParamStore::value_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_)
        n += e.value.size();
    return n;
}

std::size_t ParamStore::trainable_value_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_)
        if (e.trainable)
            n += e.value.size();
    return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
    return entries_ == other.entries_;
}

std::vector<std::uint8_t> ParamStore::serialize() const {
    binio::Writer w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
        w.string_u16(name);
        w.u8(kDtypeF64);
        const auto& shape = e.value.shape();
        if (shape.size() > UINT8_MAX)
            throw UsageError("parameter '" + name + "' rank too large");
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto extent : shape)
            w.u32(static_cast<std::uint32_t>(extent));
        w.bytes(e.value.data(), e.value.size() * sizeof(double));
    }
    return w.take();
}

ParamStore ParamStore::deserialize(std::span<const std::uint8_t> bytes, const std::string& context) {
    binio::Reader r(bytes, context);
    if (!r.magic(kMagic))
        throw DataError(context + ": bad magic (expected RDWT)");
    const auto version = r.u32();
    if (version != kVersion)
        throw DataError(context + ": unsupported version " + std::to_string(version));
    const auto count = r.u32();
    ParamStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.string_u16();
        const auto dtype = r.u8();
        const auto rank = r.u8();
        Shape shape(rank);
        for (auto& extent : shape) {
            extent = r.u32();
            if (extent == 0)
                throw DataError(context + ": zero extent in '" + name + "'");
        }
        std::vector<double> values(shape_numel(shape));
        if (dtype == kDtypeF64) {
            r.bytes(values.data(), values.size() * sizeof(double));
        } else if (dtype == kDtypeF32) {
            for (auto& v : values)
                v = r.f32();
        } else {
            throw DataError(context + ": unknown dtype tag " + std::to_string(dtype) + " for '" + name + "'");
        }
        if (store.contains(name))
            throw DataError(context + ": duplicate entry '" + name + "'");
        store.add(name, Tensor(std::move(shape), std::move(values)));
    }
    return store;
}

void ParamStore::save(const std::string& path) const {
    binio::write_file(path, serialize());
}

ParamStore ParamStore::load(const std::string& path) {
    const auto bytes = binio::read_file(path);
    return deserialize(bytes, path);
}

std::uint64_t ParamStore::content_hash() const {
    return binio::fnv1a(serialize());
}

} // namespace rawdiff
