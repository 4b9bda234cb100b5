#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpcr {

using Shape = std::vector<int>;

inline int numel(const Shape& s) {
    int n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s);

/// Dense row-major double tensor. `grad`, when non-empty, mirrors `values`.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), values(static_cast<size_t>(lpcr::numel(shape)), fill) {
        validate_shape();
    }
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        validate_shape();
        if (static_cast<int>(values.size()) != lpcr::numel(shape))
            throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                        " values for shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    int numel() const { return static_cast<int>(values.size()); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() { grad.assign(values.size(), 0.0); }

    double& at(std::initializer_list<int> idx) { return values[flat_index(idx)]; }
    double at(std::initializer_list<int> idx) const { return values[flat_index(idx)]; }

    size_t flat_index(std::initializer_list<int> idx) const;

private:
    void validate_shape() const {
        for (int e : shape)
            if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
    }
};

/// Throws if any value is NaN or Inf.
void check_finite(const Tensor& t, const std::string& what);
void check_finite(const double* v, size_t n, const std::string& what);

}  // namespace lpcr
