/*
 * Copyright 2026 The srwm-acl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace srwm {

// Layout (all integers little-endian):
//   magic "SRWMACL1" | u32 version | u32 real_bytes | u64 config_hash | u64 step
//   str model_config_json | str run_config_json | str rng_state
//   u32 n_params  { str name | u32 rank | u64 dims[rank] | real data[] }
//   u64 optim_step | f64 beta1 | f64 beta2 | f64 eps
//   u32 n_moments { tensor m | tensor v }   (same order as params)
//   magic "SRWMEND!"
// where str is u32 length + bytes.

namespace {

constexpr char kMagic[8] = {'S', 'R', 'W', 'M', 'A', 'C', 'L', '1'};
constexpr char kTrailer[8] = {'S', 'R', 'W', 'M', 'E', 'N', 'D', '!'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

void put_tensor(std::string& out, const Tensor& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    for (Real v : t.data()) put<Real>(out, v);
}

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    template <class T>
    T get() {
        need(sizeof(T));
        char buf[sizeof(T)];
        std::memcpy(buf, data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    }

    std::string get_str() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    Tensor get_tensor() {
        const auto rank = get<std::uint32_t>();
        if (rank > 8) fail("implausible tensor rank");
        Shape shape(rank);
        for (auto& e : shape) {
            e = static_cast<std::size_t>(get<std::uint64_t>());
            if (e == 0) fail("zero tensor extent");
        }
        const std::size_t n = shape_size(shape);
        need(n * sizeof(Real));
        std::vector<Real> values(n);
        for (Real& v : values) v = get<Real>();
        return Tensor(std::move(shape), std::move(values));
    }

    void expect_bytes(const char (&magic)[8], const char* what) {
        need(8);
        if (std::memcmp(data_.data() + pos_, magic, 8) != 0) fail(std::string("bad ") + what);
        pos_ += 8;
    }

    bool at_end() const { return pos_ == data_.size(); }

    [[noreturn]] void fail(const std::string& why) const { throw FormatError(path_ + ": " + why); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) fail("truncated checkpoint");
    }

    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::uint64_t config_hash(const ModelConfig& cfg) { return fnv1a(to_json(cfg).dump()); }

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
    std::string out;
    out.append(kMagic, 8);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, sizeof(Real));
    put<std::uint64_t>(out, config_hash(ckpt.params.config));
    put<std::uint64_t>(out, ckpt.step);
    put_str(out, to_json(ckpt.params.config).dump());
    put_str(out, ckpt.run_config.is_null() ? std::string("null") : ckpt.run_config.dump());
    put_str(out, ckpt.rng_state);
    const auto named = ckpt.params.named();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        put_str(out, name);
        put_tensor(out, *t);
    }
    put<std::uint64_t>(out, ckpt.optim.step);
    put<double>(out, static_cast<double>(ckpt.optim.beta1));
    put<double>(out, static_cast<double>(ckpt.optim.beta2));
    put<double>(out, static_cast<double>(ckpt.optim.eps));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.optim.m.size()));
    for (std::size_t i = 0; i < ckpt.optim.m.size(); ++i) {
        put_tensor(out, ckpt.optim.m[i]);
        put_tensor(out, ckpt.optim.v[i]);
    }
    out.append(kTrailer, 8);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing checkpoint " + path.string());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    Reader r(std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()), path.string());

    r.expect_bytes(kMagic, "checkpoint magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
    const auto real_bytes = r.get<std::uint32_t>();
    if (real_bytes != sizeof(Real))
        r.fail("checkpoint stores " + std::to_string(real_bytes * 8) + "-bit values, build uses " +
               std::to_string(sizeof(Real) * 8) + "-bit");
    const auto stored_hash = r.get<std::uint64_t>();

    ModelCheckpoint ck;
    ck.step = static_cast<std::size_t>(r.get<std::uint64_t>());
    const std::string model_json = r.get_str();
    if (fnv1a(model_json) != stored_hash) r.fail("config hash does not match the stored model config");
    ModelConfig cfg;
    try {
        cfg = model_config_from_json(nlohmann::json::parse(model_json));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("model config block: ") + e.what());
    }
    if (expected && config_hash(*expected) != stored_hash)
        throw ConfigError("checkpoint " + path.string() + " was trained with a different model config (stored " +
                          model_json + ", expected " + to_json(*expected).dump() + ")");
    try {
        ck.run_config = nlohmann::json::parse(r.get_str());
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("run config block: ") + e.what());
    }
    ck.rng_state = r.get_str();
    ck.config_hash = stored_hash;

    ck.params = init_model(cfg);
    auto named = ck.params.named();
    const auto n = r.get<std::uint32_t>();
    if (n != named.size())
        r.fail("checkpoint has " + std::to_string(n) + " tensors, model needs " + std::to_string(named.size()));
    for (auto& [name, t] : named) {
        const std::string stored = r.get_str();
        if (stored != name) r.fail("expected tensor " + name + ", found " + stored);
        Tensor v = r.get_tensor();
        if (v.shape() != t->shape())
            r.fail("tensor " + name + " has shape " + shape_str(v.shape()) + ", expected " + shape_str(t->shape()));
        *t = v.set_requires_grad(true);
    }
    ck.optim.step = static_cast<std::size_t>(r.get<std::uint64_t>());
    ck.optim.beta1 = static_cast<Real>(r.get<double>());
    ck.optim.beta2 = static_cast<Real>(r.get<double>());
    ck.optim.eps = static_cast<Real>(r.get<double>());
    const auto nm = r.get<std::uint32_t>();
    if (nm != 0 && nm != named.size()) r.fail("optimizer moment count does not match the parameters");
    for (std::size_t i = 0; i < nm; ++i) {
        Tensor m = r.get_tensor();
        Tensor v = r.get_tensor();
        if (m.shape() != named[i].second->shape() || v.shape() != named[i].second->shape())
            r.fail("optimizer moments for " + named[i].first + " have the wrong shape");
        ck.optim.m.push_back(std::move(m));
        ck.optim.v.push_back(std::move(v));
    }
    r.expect_bytes(kTrailer, "checkpoint trailer");
    if (!r.at_end()) r.fail("trailing bytes after checkpoint");
    return ck;
}

}  // namespace srwm
