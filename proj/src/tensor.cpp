#include "bamnet/tensor.hpp"

namespace bamnet {

std::string dtype_name(DType dtype) {
    switch (dtype) {
        case DType::Float32: return "float32";
        case DType::Float64: return "float64";
        case DType::UInt8: return "uint8";
    }
    return "unknown";
}

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::Float32: return 4;
        case DType::Float64: return 8;
        case DType::UInt8: return 1;
    }
    throw std::invalid_argument("unknown dtype");
}

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    std::size_t n = 1;
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero extent");
        n *= e;
    }
    return n;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
}

}  // namespace bamnet
