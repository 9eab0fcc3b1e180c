#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gaitgs/core/tensor.hpp"

// Named-tensor archive used for checkpoints: a length-prefixed JSON header
// describing {name, shape, offset} per tensor plus manifest metadata
// {iteration, config_hash, rng_state}, followed by the raw tensor payload as
// little-endian IEEE floats (f32 or f64 to match the training precision;
// resume must be bit-identical, so doubles are never narrowed).

namespace gaitgs::train {

// Tensor payloads are written via raw memory, so the host must already be
// little-endian for the on-disk format to hold.
static_assert(std::endian::native == std::endian::little,
              "archive format requires a little-endian host");

namespace detail {

template <typename T>
const char* dtype_name() {
    if constexpr (sizeof(T) == 4)
        return "f32";
    else
        return "f64";
}

}  // namespace detail

struct ArchiveMeta {
    std::int64_t iteration = 0;
    std::string config_hash;
    std::string rng_state;
};

/// Write named tensors plus manifest metadata. Entry order in the file
/// follows the order of `tensors`.
template <typename T>
void write_archive(const std::string& path,
                   const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors,
                   const ArchiveMeta& meta) {
    static_assert(std::is_floating_point_v<T> && (sizeof(T) == 4 || sizeof(T) == 8));
    nlohmann::json header;
    header["dtype"] = detail::dtype_name<T>();
    header["meta"] = {{"iteration", meta.iteration},
                      {"config_hash", meta.config_hash},
                      {"rng_state", meta.rng_state}};
    std::int64_t offset = 0;
    auto& list = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        list.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
        offset += t->numel() * static_cast<std::int64_t>(sizeof(T));
    }

    const std::string head = header.dump();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    const std::uint64_t head_len = head.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<char>((head_len >> (8 * i)) & 0xff);
    f.write(lenbuf, 8);
    f.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->numel() * sizeof(T)));
    if (!f) throw std::runtime_error("write failed for " + path);
}

template <typename T>
struct Archive {
    ArchiveMeta meta;
    std::vector<std::string> order;  // names in file order
    std::map<std::string, Tensor<T>> tensors;
};

template <typename T>
Archive<T> read_archive(const std::string& path) {
    static_assert(std::is_floating_point_v<T> && (sizeof(T) == 4 || sizeof(T) == 8));
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char lenbuf[8];
    f.read(lenbuf, 8);
    if (!f) throw std::runtime_error("truncated archive " + path);
    std::uint64_t head_len = 0;
    for (int i = 0; i < 8; ++i)
        head_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(lenbuf[i])) << (8 * i);
    std::string head(head_len, '\0');
    f.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!f) throw std::runtime_error("truncated archive header " + path);

    nlohmann::json header = nlohmann::json::parse(head);
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != detail::dtype_name<T>())
        throw std::runtime_error("archive " + path + " holds " + dtype + " data, expected " +
                                 detail::dtype_name<T>());

    Archive<T> a;
    a.meta.iteration = header.at("meta").at("iteration").get<std::int64_t>();
    a.meta.config_hash = header.at("meta").at("config_hash").get<std::string>();
    a.meta.rng_state = header.at("meta").at("rng_state").get<std::string>();

    const std::streampos payload_start = f.tellg();
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        const std::int64_t offset = entry.at("offset").get<std::int64_t>();
        Tensor<T> t(shape);
        f.seekg(payload_start + static_cast<std::streamoff>(offset));
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(T)));
        if (!f) throw std::runtime_error("truncated tensor " + name + " in " + path);
        a.order.push_back(name);
        a.tensors.emplace(name, std::move(t));
    }
    return a;
}

}  // namespace gaitgs::train
