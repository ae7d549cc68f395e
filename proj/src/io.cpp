// SPDX-License-Identifier: Apache-2.0
#include "nopkit/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace nopkit {

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor records are written in native order; big-endian hosts need byte swaps");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw IoError("tensor record truncated");
    return v;
}

template <typename T>
void write_payload(std::ostream& os, std::uint8_t dtype, const Tensor<T>& t) {
    os.write("NTNS", 4);
    put<std::uint32_t>(os, kTensorRecordVersion);
    put<std::uint8_t>(os, dtype);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape().dims()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

template <typename T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
    Tensor<T> t(std::move(shape));
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(T))))
        throw IoError("tensor record payload truncated");
    return t;
}

} // namespace

void write_tensor(std::ostream& os, const AnyTensor& t) {
    if (const auto* r = std::get_if<RTensor>(&t)) {
        if (r->rank() > 255) throw IoError("tensor rank exceeds record limit");
        write_payload(os, 0, *r);
    } else {
        const auto& c = std::get<CTensor>(t);
        if (c.rank() > 255) throw IoError("tensor rank exceeds record limit");
        write_payload(os, 1, c);
    }
    if (!os) throw IoError("failed to write tensor record");
}

AnyTensor read_tensor(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "NTNS", 4) != 0)
        throw IoError("bad tensor record magic");
    const auto version = get<std::uint32_t>(is);
    if (version != kTensorRecordVersion)
        throw IoError("unsupported tensor record version " + std::to_string(version));
    const auto dtype = get<std::uint8_t>(is);
    const auto ndim = get<std::uint8_t>(is);
    std::vector<std::size_t> dims(ndim);
    for (auto& d : dims) {
        const auto e = get<std::uint64_t>(is);
        if (e == 0 || e > (std::uint64_t{1} << 40)) throw IoError("corrupt tensor extent");
        d = static_cast<std::size_t>(e);
    }
    Shape shape;
    try {
        shape = Shape(std::move(dims));
    } catch (const ShapeError& e) {
        throw IoError(std::string("corrupt tensor shape: ") + e.what());
    }
    if (dtype == 0) return read_payload<double>(is, std::move(shape));
    if (dtype == 1) return read_payload<cdouble>(is, std::move(shape));
    throw IoError("unknown tensor dtype " + std::to_string(dtype));
}

void save_tensor(const std::filesystem::path& path, const AnyTensor& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

AnyTensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_tensor(is);
}

RTensor load_real_tensor(const std::filesystem::path& path) {
    auto t = load_tensor(path);
    if (auto* r = std::get_if<RTensor>(&t)) return std::move(*r);
    throw IoError(path.string() + ": expected a real tensor");
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& [k, v] : m) os << k << '=' << v << '\n';
    if (!os) throw IoError("failed to write " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    Manifest m;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed manifest line: " + line);
        m[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return m;
}

} // namespace nopkit
