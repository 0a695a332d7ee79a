#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tensor/tensor.hpp"

namespace rawdiff {

/// Named parameters with a per-entry trainable flag. Iteration order is the
/// lexicographic order of names, which fixes every reduction order downstream.
class ParamStore {
public:
    struct Entry {
        Tensor value;
        bool trainable = true;
    };

    void add(const std::string& name, Tensor value, bool trainable = true);
    void set(const std::string& name, Tensor value);
    void erase(const std::string& name);

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get_mut(const std::string& name);

    bool trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool trainable);

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    std::size_t size() const { return entries_.size(); }
    std::size_t value_count() const;
    std::size_t trainable_value_count() const;

    const std::map<std::string, Entry>& entries() const { return entries_; }

    bool operator==(const ParamStore& other) const;

    /// "RDWT" container. Values are written as f64; f32 entries are accepted on read.
    std::vector<std::uint8_t> serialize() const;
    static ParamStore deserialize(std::span<const std::uint8_t> bytes, const std::string& context = "parameter container");
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

    /// Hash of the serialized bytes.
    std::uint64_t content_hash() const;

private:
    std::map<std::string, Entry> entries_;
};

inline bool operator==(const ParamStore::Entry& a, const ParamStore::Entry& b) {
    return a.trainable == b.trainable && a.value == b.value;
}

} // namespace rawdiff
