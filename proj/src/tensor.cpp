#include "plab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "plab/rng.hpp"

namespace plab {

namespace {

std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (const auto d : shape) {
        if (d < 0) throw Error("negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
    Tensor t;
    const std::int64_t n = checked_numel(shape);
    t.shape = std::move(shape);
    t.data.assign(static_cast<std::size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.data) x = value;
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Tensor t;
    const std::int64_t r = static_cast<std::int64_t>(rows.size());
    const std::int64_t c = r > 0 ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
    t.shape = {r, c};
    t.data.reserve(static_cast<std::size_t>(r * c));
    for (const auto& row : rows) {
        if (static_cast<std::int64_t>(row.size()) != c) {
            throw Error("ragged rows in tensor literal");
        }
        t.data.insert(t.data.end(), row.begin(), row.end());
    }
    return t;
}

Tensor Tensor::from_vec(std::vector<double> values) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(values.size())};
    t.data = std::move(values);
    return t;
}

Tensor Tensor::identity(std::int64_t n) {
    Tensor t = zeros({n, n});
    for (std::int64_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void Tensor::check_finite(const char* where) const {
    for (const double x : data) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value in ") + where);
        }
    }
}

Tensor uniform_tensor(std::vector<std::int64_t> shape, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.data) x = rng.uniform(-bound, bound);
    return t;
}

}  // namespace plab
