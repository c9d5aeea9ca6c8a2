#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace compcal {

// Dense row-major matrix of doubles. A row typically holds one sample.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    std::string shape_str() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// c = a * b. Shapes must agree; throws std::invalid_argument otherwise.
Matrix matmul(const Matrix& a, const Matrix& b);

// c = a^T * b without materialising the transpose.
Matrix matmul_transpose_a(const Matrix& a, const Matrix& b);

// c = a * b^T without materialising the transpose.
Matrix matmul_transpose_b(const Matrix& a, const Matrix& b);

// Adds a length-cols vector to every row of m in place.
void add_row_vector(Matrix& m, std::span<const double> v);

// True if every entry is finite.
bool all_finite(const Matrix& m);
bool all_finite(std::span<const double> v);

}  // namespace compcal
