#pragma once

#include <cstddef>

#include "driftlearn/config.hpp"
#include "driftlearn/tensor.hpp"

namespace driftlearn {

// Sequences are H x K matrices (rows = time steps, oldest first).

// Mean squared mismatch of first-order temporal differences. Degenerate
// windows (H < 2) contribute 0; `degenerate` is set so callers can warn.
inline double trend_loss(const Mat& yhat, const Mat& y, bool* degenerate = nullptr) {
    check_dim(yhat.same_shape(y), "trend_loss");
    const std::size_t h = yhat.rows, k = yhat.cols;
    if (h < 2) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t t = 1; t < h; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            const double dh = yhat.at(t, j) - yhat.at(t - 1, j);
            const double dy = y.at(t, j) - y.at(t - 1, j);
            const double d = dh - dy;
            acc += d * d;
        }
    }
    return acc / static_cast<double>(k * (h - 1));
}

// Mean squared mismatch of second-order temporal differences; 0 when H < 3.
inline double diff_loss(const Mat& yhat, const Mat& y, bool* degenerate = nullptr) {
    check_dim(yhat.same_shape(y), "diff_loss");
    const std::size_t h = yhat.rows, k = yhat.cols;
    if (h < 3) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t t = 2; t < h; ++t) {
        for (std::size_t j = 0; j < k; ++j) {
            const double d2h =
                yhat.at(t, j) - 2.0 * yhat.at(t - 1, j) + yhat.at(t - 2, j);
            const double d2y = y.at(t, j) - 2.0 * y.at(t - 1, j) + y.at(t - 2, j);
            const double d = d2h - d2y;
            acc += d * d;
        }
    }
    return acc / static_cast<double>(k * (h - 2));
}

// Squared mismatch of per-target population variances over the window.
inline double vol_loss(const Mat& yhat, const Mat& y) {
    check_dim(yhat.same_shape(y), "vol_loss");
    const std::size_t h = yhat.rows, k = yhat.cols;
    if (h == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        Vec a(h), b(h);
        for (std::size_t t = 0; t < h; ++t) {
            a[t] = yhat.at(t, j);
            b[t] = y.at(t, j);
        }
        const double d = variance_pop(a) - variance_pop(b);
        acc += d * d;
    }
    return acc / static_cast<double>(k);
}

inline double mse_block(const Mat& yhat, const Mat& y) {
    check_dim(yhat.same_shape(y), "mse_block");
    if (yhat.data.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < yhat.data.size(); ++i) {
        const double d = yhat.data[i] - y.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(yhat.data.size());
}

struct JointLossWeights {
    double w_trend = 0.0;
    double w_diff = 0.0;
    double w_vol = 0.0;

    static JointLossWeights from_level(const LevelConfig& lc) {
        return {lc.w_trend, lc.w_diff, lc.w_vol};
    }
};

// L = L_err + w_tr*L_trend + w_df*L_diff + w_vl*L_vol over one H-step block.
inline double joint_loss(const Mat& yhat, const Mat& y, const JointLossWeights& w) {
    return mse_block(yhat, y) + w.w_trend * trend_loss(yhat, y) + w.w_diff * diff_loss(yhat, y) +
           w.w_vol * vol_loss(yhat, y);
}

namespace detail {

// Gradient of the trend/diff/vol terms (not the MSE term) for one block,
// accumulated into d with the given scale.
inline void aux_loss_grad_block(const Mat& yhat, const Mat& y, const JointLossWeights& w,
                                double scale, Mat& d) {
    const std::size_t h = yhat.rows, k = yhat.cols;
    if (h == 0) return;
    if (w.w_trend > 0.0 && h >= 2) {
        const double c = scale * w.w_trend * 2.0 / static_cast<double>(k * (h - 1));
        for (std::size_t t = 1; t < h; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                const double diff = (yhat.at(t, j) - yhat.at(t - 1, j)) -
                                    (y.at(t, j) - y.at(t - 1, j));
                d.at(t, j) += c * diff;
                d.at(t - 1, j) -= c * diff;
            }
        }
    }
    if (w.w_diff > 0.0 && h >= 3) {
        const double c = scale * w.w_diff * 2.0 / static_cast<double>(k * (h - 2));
        for (std::size_t t = 2; t < h; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                const double diff =
                    (yhat.at(t, j) - 2.0 * yhat.at(t - 1, j) + yhat.at(t - 2, j)) -
                    (y.at(t, j) - 2.0 * y.at(t - 1, j) + y.at(t - 2, j));
                d.at(t, j) += c * diff;
                d.at(t - 1, j) -= 2.0 * c * diff;
                d.at(t - 2, j) += c * diff;
            }
        }
    }
    if (w.w_vol > 0.0) {
        const double c = scale * w.w_vol * 2.0 / static_cast<double>(k);
        for (std::size_t j = 0; j < k; ++j) {
            double mh = 0.0, my = 0.0;
            for (std::size_t t = 0; t < h; ++t) {
                mh += yhat.at(t, j);
                my += y.at(t, j);
            }
            mh /= static_cast<double>(h);
            my /= static_cast<double>(h);
            double vh = 0.0, vy = 0.0;
            for (std::size_t t = 0; t < h; ++t) {
                vh += (yhat.at(t, j) - mh) * (yhat.at(t, j) - mh);
                vy += (y.at(t, j) - my) * (y.at(t, j) - my);
            }
            vh /= static_cast<double>(h);
            vy /= static_cast<double>(h);
            const double dv = vh - vy;
            for (std::size_t t = 0; t < h; ++t) {
                d.at(t, j) += c * dv * 2.0 / static_cast<double>(h) * (yhat.at(t, j) - mh);
            }
        }
    }
}

}  // namespace detail

// Batched joint loss used during fine-tuning: the base error term is MSE over
// the whole timestamp-ordered batch, while the trend/diff/vol terms are
// averaged over consecutive H-length chunks of it. Fills d_preds (if given)
// with d(loss)/d(preds).
inline double batched_joint_loss(const Mat& preds, const Mat& labels, std::size_t h_seq,
                                 const JointLossWeights& w, Mat* d_preds = nullptr) {
    check_dim(preds.same_shape(labels), "batched_joint_loss");
    const std::size_t b = preds.rows, k = preds.cols;
    if (b == 0) return 0.0;
    double loss = mse_block(preds, labels);
    if (d_preds) {
        *d_preds = Mat(b, k);
        const double c = 2.0 / static_cast<double>(b * k);
        for (std::size_t i = 0; i < b * k; ++i) {
            d_preds->data[i] = c * (preds.data[i] - labels.data[i]);
        }
    }
    if (w.w_trend == 0.0 && w.w_diff == 0.0 && w.w_vol == 0.0) return loss;

    const std::size_t h = std::min(h_seq, b);
    const std::size_t n_chunks = (b + h - 1) / h;
    const double chunk_scale = 1.0 / static_cast<double>(n_chunks);
    double aux = 0.0;
    for (std::size_t c0 = 0; c0 < b; c0 += h) {
        const std::size_t ch = std::min(h, b - c0);
        Mat yh(ch, k), yy(ch, k);
        for (std::size_t t = 0; t < ch; ++t) {
            for (std::size_t j = 0; j < k; ++j) {
                yh.at(t, j) = preds.at(c0 + t, j);
                yy.at(t, j) = labels.at(c0 + t, j);
            }
        }
        aux += chunk_scale * (w.w_trend * trend_loss(yh, yy) + w.w_diff * diff_loss(yh, yy) +
                              w.w_vol * vol_loss(yh, yy));
        if (d_preds) {
            Mat dchunk(ch, k);
            detail::aux_loss_grad_block(yh, yy, w, chunk_scale, dchunk);
            for (std::size_t t = 0; t < ch; ++t) {
                for (std::size_t j = 0; j < k; ++j) {
                    d_preds->at(c0 + t, j) += dchunk.at(t, j);
                }
            }
        }
    }
    return loss + aux;
}

}  // namespace driftlearn
