#pragma once

#include <cstddef>
#include <deque>
#include <vector>

#include "driftlearn/model.hpp"
#include "driftlearn/tensor.hpp"

namespace driftlearn {

// Fixed-capacity FIFO of compact memory items. Each entry keeps the item
// value (what aggregation consumes) and the pooled backbone feature it was
// derived from, which lets training recompute items under live memory
// projection parameters.
class MemoryQueue {
public:
    struct Entry {
        Vec item;    // C, ReLU(W_m * pooled + b_m) at creation time
        Vec pooled;  // 2C
    };

    MemoryQueue() = default;
    MemoryQueue(std::size_t capacity, std::size_t item_dim)
        : capacity_(capacity), item_dim_(item_dim) {}

    void push(Vec item, Vec pooled = {}) {
        check_dim(item.size() == item_dim_, "MemoryQueue::push");
        entries_.push_back({std::move(item), std::move(pooled)});
        if (entries_.size() > capacity_) entries_.pop_front();
    }

    // Mean of the R_t = min(R, size) newest items; zero vector when empty.
    Vec aggregate(std::size_t r) const {
        Vec out(item_dim_, 0.0);
        const std::size_t rt = std::min(r, entries_.size());
        if (rt == 0) return out;
        for (std::size_t i = 0; i < rt; ++i) {
            const Vec& m = entries_[entries_.size() - 1 - i].item;
            for (std::size_t c = 0; c < item_dim_; ++c) out[c] += m[c];
        }
        const double inv = 1.0 / static_cast<double>(rt);
        for (double& v : out) v *= inv;
        return out;
    }

    // Pooled features of the R newest entries, oldest first (training context).
    std::vector<Vec> recent_pooled(std::size_t r) const {
        const std::size_t rt = std::min(r, entries_.size());
        std::vector<Vec> out;
        out.reserve(rt);
        for (std::size_t i = rt; i > 0; --i) {
            out.push_back(entries_[entries_.size() - i].pooled);
        }
        return out;
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t item_dim() const { return item_dim_; }
    bool empty() const { return entries_.empty(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    void clear() { entries_.clear(); }

private:
    std::size_t capacity_ = 0;
    std::size_t item_dim_ = 0;
    std::deque<Entry> entries_;
};

// g = sigmoid(W_g [z; mbar] + b_g), z~ = g.z + (1-g).mbar
inline Vec fuse(const Vec& z, const Vec& mbar, const Mat& w_gate, const Vec& b_gate) {
    check_dim(z.size() == mbar.size() && w_gate.cols == 2 * z.size() &&
                  w_gate.rows == z.size() && b_gate.size() == z.size(),
              "fuse");
    const std::size_t c = z.size();
    Vec zm(2 * c);
    for (std::size_t i = 0; i < c; ++i) zm[i] = z[i];
    for (std::size_t i = 0; i < c; ++i) zm[c + i] = mbar[i];
    Vec out(c);
    for (std::size_t i = 0; i < c; ++i) {
        const double* wr = w_gate.row(i);
        double acc = b_gate[i];
        for (std::size_t j = 0; j < 2 * c; ++j) acc += wr[j] * zm[j];
        const double g = sigmoid(acc);
        out[i] = g * z[i] + (1.0 - g) * mbar[i];
    }
    return out;
}

inline Vec fuse(const ModelParams& p, const Vec& z, const Vec& mbar) {
    return fuse(z, mbar, p.w_gate, p.b_gate);
}

// m = ReLU(W_m * pooled + b_m); entrywise nonnegative by construction.
inline Vec make_memory_item(const Vec& pooled, const Mat& w_mem, const Vec& b_mem) {
    Vec m = affine(w_mem, b_mem, pooled);
    for (double& v : m) v = relu(v);
    return m;
}

inline Vec make_memory_item(const ModelParams& p, const Vec& pooled) {
    return make_memory_item(pooled, p.w_mem, p.b_mem);
}

}  // namespace driftlearn
