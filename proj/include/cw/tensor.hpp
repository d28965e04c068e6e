#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cw {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

namespace detail {

// Recycles large double buffers. Graph construction allocates and frees the
// same handful of multi-megabyte activation shapes every training step; on
// glibc each of those cycles costs an mmap/munmap plus page faults, which
// dominates the step time. Buffers below the threshold go to the general
// heap as usual.
class BufferPool {
public:
    static constexpr std::size_t kMinPooled = 1 << 14;       // elements
    static constexpr std::size_t kMaxHeldBytes = 512u << 20;  // per process

    static BufferPool& instance() {
        static BufferPool pool;
        return pool;
    }

    std::vector<double> acquire(std::size_t n) {
        if (n >= kMinPooled) {
            std::lock_guard<std::mutex> lock(mu_);
            auto it = free_.find(n);
            if (it != free_.end() && !it->second.empty()) {
                std::vector<double> v = std::move(it->second.back());
                it->second.pop_back();
                held_ -= v.capacity() * sizeof(double);
                return v;  // size n, stale contents
            }
        }
        return std::vector<double>(n);
    }

    void release(std::vector<double>&& v) {
        if (v.size() < kMinPooled || v.size() != v.capacity()) return;
        std::lock_guard<std::mutex> lock(mu_);
        if (held_ + v.capacity() * sizeof(double) > kMaxHeldBytes) return;
        held_ += v.capacity() * sizeof(double);
        free_[v.size()].push_back(std::move(v));
    }

private:
    std::mutex mu_;
    std::unordered_map<std::size_t, std::vector<std::vector<double>>> free_;
    std::size_t held_ = 0;
};

}  // namespace detail

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar.
// Buffers are recycled through the process-wide pool; contents semantics are
// unchanged (the zeroing constructor still zeroes).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : Tensor(std::move(shape), Uninit{}) {
        std::fill(data_.begin(), data_.end(), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        require(static_cast<std::int64_t>(data_.size()) == shape_numel(shape_),
                "data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_str(shape_));
    }

    Tensor(const Tensor& o) : Tensor(o.shape_, Uninit{}) {
        std::copy(o.data_.begin(), o.data_.end(), data_.begin());
    }
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(const Tensor& o) {
        if (this != &o) {
            shape_ = o.shape_;
            data_ = o.data_;  // reuses capacity when sufficient
        }
        return *this;
    }
    Tensor& operator=(Tensor&&) noexcept = default;
    ~Tensor() { detail::BufferPool::instance().release(std::move(data_)); }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    // For outputs that are fully overwritten right away.
    static Tensor uninitialized(Shape shape) { return Tensor(std::move(shape), Uninit{}); }
    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape), Uninit{});
        for (auto& x : t.data_) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double item() const {
        require(numel() == 1, "item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(Shape s) const {
        require(shape_numel(s) == numel(), "cannot reshape " + shape_str(shape_) + " to " +
                                               shape_str(s) + " (element counts differ)");
        return Tensor(std::move(s), data_);
    }

private:
    struct Uninit {};
    Tensor(Shape shape, Uninit) : shape_(std::move(shape)) {
        for (auto d : shape_)
            require(d > 0, "tensor axis lengths must be positive, got " + shape_str(shape_));
        data_ = detail::BufferPool::instance().acquire(
            static_cast<std::size_t>(shape_numel(shape_)));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    require(a.same_shape(b), std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                                 shape_str(b.shape()) + " differ");
}

}  // namespace cw
