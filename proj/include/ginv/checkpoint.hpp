#pragma once

#include <json.hpp>
#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "ginv/common.hpp"
#include "ginv/critic.hpp"
#include "ginv/generator.hpp"
#include "ginv/tensor.hpp"

namespace ginv {

using ordered_json = nlohmann::ordered_json;

// Checkpoint container: one file holding a JSON manifest plus raw
// little-endian float32 blobs. The manifest names every blob with shape and
// byte offset and records a CRC-32 of the blob region.
//
//   bytes 0..7   magic "GINVCKP1"
//   bytes 8..15  u64 little-endian manifest length
//   manifest     JSON
//   blobs        packed float32 data

inline constexpr char kCkptMagic[9] = "GINVCKP1";
inline constexpr int kCkptFormatVersion = 1;

struct NamedBlob {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    ordered_json meta;  // kind, arch, seed, train metadata, ...
    std::vector<NamedBlob> blobs;

    const NamedBlob* find(const std::string& name) const {
        for (const auto& b : blobs)
            if (b.name == name) return &b;
        return nullptr;
    }
};

inline uint32_t crc32_bytes(const void* data, size_t n, uint32_t seed = 0) {
    return static_cast<uint32_t>(
        ::crc32(seed, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

inline std::string config_digest(const ordered_json& j) {
    const std::string s = j.dump();
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc32_bytes(s.data(), s.size()));
    return buf;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    static_assert(sizeof(float) == 4);
    std::vector<float> blob;
    ordered_json params = ordered_json::array();
    uint64_t offset = 0;
    for (const auto& b : ckpt.blobs) {
        int64_t n = 1;
        for (int64_t d : b.shape) n *= d;
        GINV_CHECK(n == static_cast<int64_t>(b.data.size()), "checkpoint: blob shape mismatch");
        ordered_json p;
        p["name"] = b.name;
        p["shape"] = b.shape;
        p["offset"] = offset;
        p["nbytes"] = b.data.size() * 4;
        params.push_back(p);
        blob.insert(blob.end(), b.data.begin(), b.data.end());
        offset += b.data.size() * 4;
    }
    const uint32_t crc = crc32_bytes(blob.data(), blob.size() * 4);

    ordered_json manifest;
    manifest["format_version"] = kCkptFormatVersion;
    manifest["meta"] = ckpt.meta;
    manifest["params"] = params;
    char crcbuf[16];
    std::snprintf(crcbuf, sizeof(crcbuf), "%08x", crc);
    manifest["blob_crc32"] = crcbuf;
    const std::string mstr = manifest.dump();

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw io_error("cannot open checkpoint for writing: " + path);
    const uint64_t mlen = mstr.size();
    bool ok = std::fwrite(kCkptMagic, 1, 8, f) == 8;
    ok = ok && std::fwrite(&mlen, 8, 1, f) == 1;
    ok = ok && (mlen == 0 || std::fwrite(mstr.data(), 1, mlen, f) == mlen);
    ok = ok && (blob.empty() || std::fwrite(blob.data(), 4, blob.size(), f) == blob.size());
    std::fclose(f);
    if (!ok) throw io_error("short write on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw io_error("cannot open checkpoint: " + path);
    char magic[8];
    uint64_t mlen = 0;
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kCkptMagic, 8) != 0) {
        std::fclose(f);
        throw io_error("not a checkpoint file (bad magic): " + path);
    }
    if (std::fread(&mlen, 8, 1, f) != 1) {
        std::fclose(f);
        throw io_error("truncated checkpoint header: " + path);
    }
    std::string mstr(mlen, '\0');
    if (mlen > 0 && std::fread(mstr.data(), 1, mlen, f) != mlen) {
        std::fclose(f);
        throw io_error("truncated checkpoint manifest: " + path);
    }
    std::vector<float> blob;
    {
        long pos = std::ftell(f);
        std::fseek(f, 0, SEEK_END);
        long end = std::ftell(f);
        std::fseek(f, pos, SEEK_SET);
        blob.resize(static_cast<size_t>(end - pos) / 4);
        if ((end - pos) % 4 != 0 ||
            (blob.size() > 0 && std::fread(blob.data(), 4, blob.size(), f) != blob.size())) {
            std::fclose(f);
            throw io_error("truncated checkpoint blob region: " + path);
        }
    }
    std::fclose(f);

    ordered_json manifest;
    try {
        manifest = ordered_json::parse(mstr);
    } catch (const std::exception& e) {
        throw io_error("unparseable checkpoint manifest in " + path + ": " + e.what());
    }
    if (!manifest.contains("format_version") ||
        manifest["format_version"].get<int>() != kCkptFormatVersion)
        throw io_error("unsupported checkpoint format version in " + path);

    const uint32_t crc = crc32_bytes(blob.data(), blob.size() * 4);
    char crcbuf[16];
    std::snprintf(crcbuf, sizeof(crcbuf), "%08x", crc);
    if (manifest["blob_crc32"].get<std::string>() != crcbuf)
        throw io_error("checkpoint blob hash mismatch (corrupted file?): " + path);

    Checkpoint ckpt;
    ckpt.meta = manifest["meta"];
    for (const auto& p : manifest["params"]) {
        NamedBlob b;
        b.name = p["name"].get<std::string>();
        b.shape = p["shape"].get<std::vector<int64_t>>();
        const uint64_t off = p["offset"].get<uint64_t>();
        const uint64_t nbytes = p["nbytes"].get<uint64_t>();
        int64_t n = 1;
        for (int64_t d : b.shape) n *= d;
        if (off % 4 != 0 || nbytes != static_cast<uint64_t>(n) * 4 ||
            off + nbytes > blob.size() * 4)
            throw io_error("inconsistent blob record '" + b.name + "' in " + path);
        b.data.assign(blob.begin() + off / 4, blob.begin() + off / 4 + n);
        ckpt.blobs.push_back(std::move(b));
    }
    return ckpt;
}

// --- model <-> checkpoint -------------------------------------------------

template <class Model>
inline void collect_blobs(Model& model, Checkpoint& ckpt) {
    auto push = [&](nn::ParamRef<float>& p) {
        NamedBlob b;
        b.name = p.name;
        b.shape = p.value->shape();
        b.data.assign(p.value->data(), p.value->data() + p.value->numel());
        ckpt.blobs.push_back(std::move(b));
    };
    for (auto p : model.params()) push(p);
    for (auto p : model.buffers()) push(p);
}

template <class Model>
inline void restore_blobs(Model& model, const Checkpoint& ckpt) {
    size_t used = 0;
    auto pull = [&](nn::ParamRef<float>& p) {
        const NamedBlob* b = ckpt.find(p.name);
        GINV_CHECK(b != nullptr, "checkpoint missing parameter: " + p.name);
        GINV_CHECK(b->shape == p.value->shape(),
                   "checkpoint shape mismatch for parameter: " + p.name);
        std::copy(b->data.begin(), b->data.end(), p.value->data());
        ++used;
    };
    for (auto p : model.params()) pull(p);
    for (auto p : model.buffers()) pull(p);
    GINV_CHECK(used == ckpt.blobs.size(), "checkpoint has extra parameter blobs");
}

inline ordered_json arch_json(const CondGenerator<float>::Arch& a) {
    ordered_json j;
    j["latent_dim"] = a.latent_dim;
    j["classes"] = a.classes;
    j["embed_dim"] = a.embed_dim;
    j["proj_channels"] = a.proj_channels;
    j["mid_channels"] = a.mid_channels;
    return j;
}

inline ordered_json arch_json(const CondCritic<float>::Arch& a) {
    ordered_json j;
    j["classes"] = a.classes;
    j["embed_dim"] = a.embed_dim;
    j["base_channels"] = a.base_channels;
    j["mid_channels"] = a.mid_channels;
    return j;
}

inline Checkpoint make_generator_checkpoint(CondGenerator<float>& g, uint64_t seed,
                                            int64_t train_steps,
                                            const std::string& train_config_digest) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "cond_generator";
    ckpt.meta["arch"] = arch_json(g.arch());
    ckpt.meta["pixel_range"] = "tanh [-1,1]; canonical external space [0,1]";
    ckpt.meta["seed"] = seed;
    ckpt.meta["train_steps"] = train_steps;
    ckpt.meta["train_config_digest"] = train_config_digest;
    collect_blobs(g, ckpt);
    return ckpt;
}

inline Checkpoint make_critic_checkpoint(CondCritic<float>& d, uint64_t seed, int64_t train_steps,
                                         const std::string& train_config_digest) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "cond_critic";
    ckpt.meta["arch"] = arch_json(d.arch());
    ckpt.meta["pixel_range"] = "model space [-1,1]";
    ckpt.meta["seed"] = seed;
    ckpt.meta["train_steps"] = train_steps;
    ckpt.meta["train_config_digest"] = train_config_digest;
    collect_blobs(d, ckpt);
    return ckpt;
}

inline CondGenerator<float> generator_from_checkpoint(const Checkpoint& ckpt) {
    GINV_CHECK(ckpt.meta.contains("kind") && ckpt.meta["kind"] == "cond_generator",
               "checkpoint is not a conditional generator");
    const auto& a = ckpt.meta["arch"];
    CondGenerator<float>::Arch arch;
    arch.latent_dim = a["latent_dim"].get<int64_t>();
    arch.classes = a["classes"].get<int64_t>();
    arch.embed_dim = a["embed_dim"].get<int64_t>();
    arch.proj_channels = a["proj_channels"].get<int64_t>();
    arch.mid_channels = a["mid_channels"].get<int64_t>();
    CondGenerator<float> g(arch);
    restore_blobs(g, ckpt);  // rejects any manifest/blob dimension mismatch
    return g;
}

inline CondCritic<float> critic_from_checkpoint(const Checkpoint& ckpt) {
    GINV_CHECK(ckpt.meta.contains("kind") && ckpt.meta["kind"] == "cond_critic",
               "checkpoint is not a conditional critic");
    const auto& a = ckpt.meta["arch"];
    CondCritic<float>::Arch arch;
    arch.classes = a["classes"].get<int64_t>();
    arch.embed_dim = a["embed_dim"].get<int64_t>();
    arch.base_channels = a["base_channels"].get<int64_t>();
    arch.mid_channels = a["mid_channels"].get<int64_t>();
    CondCritic<float> d(arch);
    restore_blobs(d, ckpt);
    return d;
}

inline CondGenerator<float> load_generator(const std::string& path) {
    return generator_from_checkpoint(load_checkpoint(path));
}

}  // namespace ginv
