#include "dataset/manifest.hpp"

#include <filesystem>
#include <set>

#include <json.hpp>

#include "common/binio.hpp"
#include "common/error.hpp"

namespace rawdiff {

namespace fs = std::filesystem;
using nlohmann::json;

const char* split_name(Split s) {
    return s == Split::Train ? "train" : "test";
}

Split parse_split(const std::string& s) {
    if (s == "train")
        return Split::Train;
    if (s == "test")
        return Split::Test;
    throw DataError("split must be 'train' or 'test', got '" + s + "'");
}

std::string Manifest::resolve(const std::string& path) const {
    const fs::path p(path);
    if (p.is_absolute() || base_dir.empty())
        return p.string();
    return (fs::path(base_dir) / p).string();
}

std::vector<const ManifestEntry*> Manifest::split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == s)
            out.push_back(&e);
    return out;
}

void Manifest::validate(std::size_t embedding_count) const {
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (e.id.empty())
            throw DataError("manifest: entry with empty id");
        if (!ids.insert(e.id).second)
            throw DataError("manifest: duplicate id '" + e.id + "'");
        if (e.clean.empty())
            throw DataError("manifest: entry '" + e.id + "' has no clean path");
        if (e.noisy && e.noisy->empty())
            throw DataError("manifest: real pair '" + e.id + "' has an empty noisy path");
        if (e.embedding_index >= embedding_count)
            throw DataError("manifest: entry '" + e.id + "' embedding index " + std::to_string(e.embedding_index) +
                            " >= embedding count " + std::to_string(embedding_count));
        if (e.gain && !(*e.gain > 0))
            throw DataError("manifest: entry '" + e.id + "' gain must be positive");
        if (e.isp)
            e.isp->validate();
    }
    isp.validate();
}

namespace {

json meta_json(const CaptureMeta& m) {
    return {{"iso", m.iso}, {"exposure_s", m.exposure_s}};
}

CaptureMeta meta_from(const json& j, CaptureMeta fallback) {
    fallback.iso = j.value("iso", fallback.iso);
    fallback.exposure_s = j.value("exposure_s", fallback.exposure_s);
    return fallback;
}

} // namespace

std::string manifest_to_json(const Manifest& m) {
    json entries = json::array();
    for (const auto& e : m.entries) {
        json j = {{"id", e.id},
                  {"clean", e.clean},
                  {"embedding_index", e.embedding_index},
                  {"split", split_name(e.split)}};
        if (e.noisy) {
            j["noisy"] = *e.noisy;
            j["noisy_meta"] = meta_json(e.noisy_meta);
            j["clean_meta"] = meta_json(e.clean_meta);
        }
        if (e.isp)
            j["isp"] = *e.isp;
        if (e.gain)
            j["gain"] = *e.gain;
        entries.push_back(std::move(j));
    }
    json root = {{"version", m.version}, {"embeddings", m.embeddings}, {"isp", m.isp}, {"entries", entries}};
    return root.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text, const std::string& base_dir, const std::string& context) {
    Manifest m;
    m.base_dir = base_dir;
    try {
        const json root = json::parse(text);
        m.version = root.value("version", 1);
        if (m.version != 1)
            throw DataError(context + ": unsupported manifest version " + std::to_string(m.version));
        m.embeddings = root.value("embeddings", std::string());
        if (root.contains("isp"))
            m.isp = root.at("isp").get<IspParams>();
        for (const auto& j : root.at("entries")) {
            ManifestEntry e;
            e.id = j.at("id").get<std::string>();
            e.clean = j.at("clean").get<std::string>();
            if (j.contains("noisy"))
                e.noisy = j.at("noisy").get<std::string>();
            e.embedding_index = j.value("embedding_index", std::size_t{0});
            e.split = parse_split(j.value("split", std::string("train")));
            if (j.contains("isp"))
                e.isp = j.at("isp").get<IspParams>();
            if (j.contains("gain"))
                e.gain = j.at("gain").get<double>();
            if (j.contains("noisy_meta"))
                e.noisy_meta = meta_from(j.at("noisy_meta"), kNoisyCapture);
            if (j.contains("clean_meta"))
                e.clean_meta = meta_from(j.at("clean_meta"), kCleanCapture);
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw DataError(context + ": malformed manifest: " + e.what());
    } catch (const UsageError& e) {
        throw DataError(context + ": " + e.what());
    }
    return m;
}

Manifest load_manifest(const std::string& path) {
    const auto bytes = binio::read_file(path);
    const std::string text(bytes.begin(), bytes.end());
    return manifest_from_json(text, fs::path(path).parent_path().string(), path);
}

void save_manifest(const std::string& path, const Manifest& m) {
    const auto text = manifest_to_json(m);
    binio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

} // namespace rawdiff
