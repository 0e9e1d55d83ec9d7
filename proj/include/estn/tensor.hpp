#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace estn {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ValueError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// Gradient cell shared by every shallow copy of a tensor. `leaf` marks a
// user tensor with requires_grad; `tracked` marks a tape-produced
// intermediate. The grad vector is
// allocated lazily and persists across tapes so leaf gradients accumulate
// until zero_grad().
template <typename T>
struct GradCell {
    std::vector<T> g;
    bool leaf = false;
    bool tracked = false;
};

template <typename T>
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<T>>()), cell_(std::make_shared<GradCell<T>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(static_cast<std::size_t>(shape_numel(shape_)), T(0))),
          cell_(std::make_shared<GradCell<T>>()) {
        validate_shape();
    }

    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))), cell_(std::make_shared<GradCell<T>>()) {
        validate_shape();
        if (static_cast<std::int64_t>(data_->size()) != shape_numel(shape_))
            throw ShapeError("tensor value count " + std::to_string(data_->size()) + " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), v);
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
        for (auto& x : *t.data_) x = static_cast<T>(dist(rng));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_->size()); }
    bool empty() const { return data_->empty(); }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    std::vector<T>& vec() { return *data_; }
    const std::vector<T>& vec() const { return *data_; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
        return (*data_)[0];
    }

    template <typename... Ix>
    T operator()(Ix... ix) const {
        return (*data_)[static_cast<std::size_t>(offset_of({static_cast<std::int64_t>(ix)...}))];
    }
    template <typename... Ix>
    T& operator()(Ix... ix) {
        return (*data_)[static_cast<std::size_t>(offset_of({static_cast<std::int64_t>(ix)...}))];
    }

    bool requires_grad() const { return cell_->leaf; }
    Tensor& set_requires_grad(bool v) {
        cell_->leaf = v;
        return *this;
    }
    bool tracked() const { return cell_->leaf || cell_->tracked; }

    bool has_grad() const { return !cell_->g.empty(); }

    // Per the accumulation contract a missing gradient reads as zero.
    Tensor grad() const {
        Tensor g(shape_);
        if (has_grad()) *g.data_ = cell_->g;
        return g;
    }

    void zero_grad() {
        if (has_grad()) std::fill(cell_->g.begin(), cell_->g.end(), T(0));
    }

    // Raw accumulation buffer, allocated on first use.
    std::vector<T>& grad_buffer() const {
        if (cell_->g.empty()) cell_->g.assign(static_cast<std::size_t>(size()), T(0));
        return cell_->g;
    }

    const std::shared_ptr<GradCell<T>>& cell() const { return cell_; }
    void mark_tracked() const { cell_->tracked = true; }

    // Shares the value storage but drops autodiff state. Used to run a model
    // as a frozen function of its input only.
    Tensor detached() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = data_;
        return t;
    }

    // Deep value copy; no autodiff state.
    Tensor clone() const {
        Tensor t(shape_);
        *t.data_ = *data_;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t{shape_};
        for (std::int64_t i = 0; i < size(); ++i) t.data()[i] = static_cast<U>((*data_)[i]);
        return t;
    }

private:
    void validate_shape() const {
        for (auto d : shape_)
            if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape_));
    }

    std::int64_t offset_of(std::initializer_list<std::int64_t> ix) const {
        if (ix.size() != shape_.size()) throw ShapeError("index rank mismatch");
        std::int64_t off = 0;
        std::size_t a = 0;
        for (auto i : ix) {
            off = off * shape_[a] + i;
            ++a;
        }
        return off;
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    mutable std::shared_ptr<GradCell<T>> cell_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Reverse-mode tape. Primitives append one closure per application in forward
// order; backward() replays them in reverse. Single-writer: one tape per
// recording thread, never shared across concurrent recordings.
template <typename T>
class GradTape {
public:
    GradTape() : prev_(cur_) { cur_ = this; }
    ~GradTape() { cur_ = prev_; }
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape* current() { return cur_; }

    void record(const char* op, std::function<void()> fn) { entries_.emplace_back(op, std::move(fn)); }

    // Registers an op output: allocates its grad buffer and schedules it for
    // zeroing at the start of every backward pass (leaf buffers are not
    // zeroed, so leaf gradients accumulate across calls).
    void mark_output(const Tensor<T>& y) {
        y.mark_tracked();
        y.grad_buffer();
        interiors_.push_back(y.cell());
    }

    void backward(const Tensor<T>& loss) {
        if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (!loss.tracked()) throw ValueError("backward() loss is not connected to this tape");
        for (auto& cell : interiors_) std::fill(cell->g.begin(), cell->g.end(), T(0));
        loss.grad_buffer()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->second();
    }

    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::pair<const char*, std::function<void()>>> entries_;
    std::vector<std::shared_ptr<GradCell<T>>> interiors_;
    GradTape* prev_;
    inline static thread_local GradTape* cur_ = nullptr;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    auto* tape = GradTape<T>::current();
    if (!tape) throw ValueError("backward() called with no active tape");
    tape->backward(loss);
}

namespace detail {

// Every primitive funnels its output through here; non-finite values are a
// contract violation and abort the computation with the op name.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    const T* p = t.data();
    const std::int64_t n = t.size();
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(p[i])))
            throw NumericError(std::string(op) + " produced a non-finite value at flat index " + std::to_string(i));
    }
}

template <typename T>
std::vector<T>& accum(const Tensor<T>& t) {
    return t.grad_buffer();
}

}  // namespace detail

}  // namespace estn
