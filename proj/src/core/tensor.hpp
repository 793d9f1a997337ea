#pragma once

#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"

namespace fraglow {

enum class DType : uint8_t { F32 = 0, F64 = 1, I64 = 2, Bool = 3 };

inline const char* dtype_name(DType t) {
    switch (t) {
        case DType::F32: return "f32";
        case DType::F64: return "f64";
        case DType::I64: return "i64";
        case DType::Bool: return "bool";
    }
    return "?";
}

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor. Values are held as doubles; F32 tensors keep every
// element exactly representable in IEEE binary32 (each op rounds through
// float), so elementwise arithmetic matches a native float pipeline and
// reductions accumulate in F64 before the final cast, in a fixed
// left-to-right order.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype), data_(numel(shape_), 0.0) {}
    Tensor(Shape shape, DType dtype, std::vector<double> data)
        : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != numel(shape_))
            fail(Errc::Shape, "tensor data length " + std::to_string(data_.size()) + " != numel of " + shape_str(shape_));
        round_to_storage();
    }

    static Tensor scalar(double v, DType dtype = DType::F32) { return Tensor({1}, dtype, {v}); }
    static Tensor zeros(Shape shape, DType dtype = DType::F32) { return Tensor(std::move(shape), dtype); }

    const Shape& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    double at(int64_t i) const { return data_[i]; }
    double& raw(int64_t i) { return data_[i]; }
    const std::vector<double>& data() const { return data_; }
    std::vector<double>& mutable_data() { return data_; }

    // Writes one element, rounding to the storage precision.
    void set(int64_t i, double v) { data_[i] = store(v); }
    double store(double v) const { return dtype_ == DType::F64 ? v : static_cast<double>(static_cast<float>(v)); }

    void round_to_storage() {
        if (dtype_ == DType::F64) return;
        for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Wire encoding: dtype u8, rank u8, dims u32 LE each, payload LE IEEE-754.
    std::vector<uint8_t> encode() const {
        std::vector<uint8_t> out;
        bool wide = dtype_ == DType::F64;
        out.reserve(2 + 4 * shape_.size() + data_.size() * (wide ? 8 : 4));
        out.push_back(wide ? 1 : 0);
        out.push_back(static_cast<uint8_t>(shape_.size()));
        for (int64_t d : shape_) {
            auto u = static_cast<uint32_t>(d);
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<uint8_t>(u >> (8 * b)));
        }
        if (wide) {
            for (double v : data_) {
                uint64_t bits;
                std::memcpy(&bits, &v, 8);
                for (int b = 0; b < 8; ++b) out.push_back(static_cast<uint8_t>(bits >> (8 * b)));
            }
        } else {
            for (double v : data_) {
                float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                for (int b = 0; b < 4; ++b) out.push_back(static_cast<uint8_t>(bits >> (8 * b)));
            }
        }
        return out;
    }

    static Tensor decode(const uint8_t* p, size_t len, size_t* consumed = nullptr) {
        if (len < 2) fail(Errc::Runtime, "tensor frame truncated");
        bool wide = p[0] == 1;
        if (p[0] > 1) fail(Errc::Runtime, "bad tensor dtype byte");
        size_t rank = p[1];
        size_t off = 2;
        if (len < off + 4 * rank) fail(Errc::Runtime, "tensor dims truncated");
        Shape shape(rank);
        for (size_t i = 0; i < rank; ++i) {
            uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<uint32_t>(p[off + b]) << (8 * b);
            shape[i] = u;
            off += 4;
        }
        int64_t n = numel(shape);
        size_t esz = wide ? 8 : 4;
        if (len < off + esz * static_cast<size_t>(n)) fail(Errc::Runtime, "tensor payload truncated");
        Tensor t(shape, wide ? DType::F64 : DType::F32);
        for (int64_t i = 0; i < n; ++i) {
            if (wide) {
                uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(p[off + b]) << (8 * b);
                double v;
                std::memcpy(&v, &bits, 8);
                t.data_[i] = v;
            } else {
                uint32_t bits = 0;
                for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(p[off + b]) << (8 * b);
                float f;
                std::memcpy(&f, &bits, 4);
                t.data_[i] = static_cast<double>(f);
            }
            off += esz;
        }
        if (consumed) *consumed = off;
        return t;
    }

  private:
    Shape shape_;
    DType dtype_ = DType::F32;
    std::vector<double> data_;
};

}  // namespace fraglow
