#include "asc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace asc {

namespace {

void check_rank4(const Tensor& x, const char* who) {
    if (x.rank() != 4) throw InputError(std::string(who) + ": expected a rank-4 B x H x W x C tensor");
}

Tensor relu_forward(const Tensor& x, std::vector<uint8_t>& mask) {
    Tensor y(x.shape);
    mask.resize(x.data.size());
    for (size_t i = 0; i < x.data.size(); ++i) {
        const bool pos = x.data[i] > 0.0;
        mask[i] = pos;
        y.data[i] = pos ? x.data[i] : 0.0;
    }
    return y;
}

Tensor relu_backward(const Tensor& dy, const std::vector<uint8_t>& mask) {
    Tensor dx(dy.shape);
    for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = mask[i] ? dy.data[i] : 0.0;
    return dx;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int kh_, int kw_, int cin_, int cout_)
    : kh(kh_), kw(kw_), cin(cin_), cout(cout_), w({kh_, kw_, cin_, cout_}), b({cout_}) {
    w.alloc_grad();
    b.alloc_grad();
}

void Conv2d::init(Rng& rng) {
    const double fan_in = static_cast<double>(kh) * kw * cin;
    const double fan_out = static_cast<double>(kh) * kw * cout;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w.data) v = rng.uniform(-limit, limit);
    std::fill(b.data.begin(), b.data.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x, bool keep_cache) {
    check_rank4(x, "conv2d");
    if (x.dim(3) != cin)
        throw InputError("conv2d: input has " + std::to_string(x.dim(3)) + " channels, expected " +
                         std::to_string(cin));
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int ph = kh / 2, pw = kw / 2;
    Tensor y({B, H, W, cout});

    const double* xp = x.data.data();
    const double* wp = w.data.data();
    const double* bp = b.data.data();
    double* yp = y.data.data();

#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < B; ++bi) {
        for (int h = 0; h < H; ++h) {
            for (int wo = 0; wo < W; ++wo) {
                double* yrow = yp + (((static_cast<int64_t>(bi) * H + h) * W + wo) * cout);
                std::memcpy(yrow, bp, sizeof(double) * static_cast<size_t>(cout));
                for (int dh = 0; dh < kh; ++dh) {
                    const int ih = h + dh - ph;
                    if (ih < 0 || ih >= H) continue;
                    for (int dw = 0; dw < kw; ++dw) {
                        const int iw = wo + dw - pw;
                        if (iw < 0 || iw >= W) continue;
                        const double* xrow = xp + (((static_cast<int64_t>(bi) * H + ih) * W + iw) * cin);
                        const double* kbase = wp + static_cast<int64_t>((dh * kw + dw)) * cin * cout;
                        for (int ci = 0; ci < cin; ++ci) {
                            const double xv = xrow[ci];
                            const double* krow = kbase + static_cast<int64_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) yrow[co] += xv * krow[co];
                        }
                    }
                }
            }
        }
    }

    if (keep_cache) x_cache_ = x;
    else x_cache_ = Tensor();
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    if (x_cache_.numel() == 0) throw StateError("conv2d: backward before forward");
    const Tensor& x = x_cache_;
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int ph = kh / 2, pw = kw / 2;
    Tensor dx(x.shape);

    const size_t wsize = w.data.size();
    std::vector<double> dw_part(static_cast<size_t>(B) * wsize, 0.0);

    // kernel transposed to [kh][kw][cout][cin] so the dx update runs along
    // contiguous memory instead of a scalar reduction
    std::vector<double> wt(wsize);
    for (int dh = 0; dh < kh; ++dh)
        for (int dw = 0; dw < kw; ++dw) {
            const size_t base = static_cast<size_t>(dh * kw + dw) * cin * cout;
            for (int ci = 0; ci < cin; ++ci)
                for (int co = 0; co < cout; ++co)
                    wt[base + static_cast<size_t>(co) * cin + ci] =
                        w.data[base + static_cast<size_t>(ci) * cout + co];
        }

    const double* xp = x.data.data();
    const double* wtp = wt.data();
    const double* dyp = dy.data.data();
    double* dxp = dx.data.data();

#pragma omp parallel for schedule(static)
    for (int bi = 0; bi < B; ++bi) {
        double* dwp = dw_part.data() + static_cast<size_t>(bi) * wsize;
        for (int h = 0; h < H; ++h) {
            for (int wo = 0; wo < W; ++wo) {
                const double* dyrow = dyp + (((static_cast<int64_t>(bi) * H + h) * W + wo) * cout);
                for (int dh = 0; dh < kh; ++dh) {
                    const int ih = h + dh - ph;
                    if (ih < 0 || ih >= H) continue;
                    for (int dw = 0; dw < kw; ++dw) {
                        const int iw = wo + dw - pw;
                        if (iw < 0 || iw >= W) continue;
                        const int64_t xoff = ((static_cast<int64_t>(bi) * H + ih) * W + iw) * cin;
                        const double* xrow = xp + xoff;
                        double* dxrow = dxp + xoff;
                        const int64_t koff = static_cast<int64_t>((dh * kw + dw)) * cin * cout;
                        double* dkbase = dwp + koff;
                        for (int ci = 0; ci < cin; ++ci) {
                            const double xv = xrow[ci];
                            double* dkrow = dkbase + static_cast<int64_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) dkrow[co] += xv * dyrow[co];
                        }
                        const double* ktbase = wtp + koff;
                        for (int co = 0; co < cout; ++co) {
                            const double dyv = dyrow[co];
                            const double* ktrow = ktbase + static_cast<int64_t>(co) * cin;
                            for (int ci = 0; ci < cin; ++ci) dxrow[ci] += dyv * ktrow[ci];
                        }
                    }
                }
            }
        }
    }

    // reduce per-item weight gradients in batch order
    for (int bi = 0; bi < B; ++bi) {
        const double* dwp = dw_part.data() + static_cast<size_t>(bi) * wsize;
        for (size_t i = 0; i < wsize; ++i) w.grad[i] += dwp[i];
    }
    for (int bi = 0; bi < B; ++bi) {
        for (int h = 0; h < H; ++h) {
            for (int wo = 0; wo < W; ++wo) {
                const double* dyrow = dyp + (((static_cast<int64_t>(bi) * H + h) * W + wo) * cout);
                for (int co = 0; co < cout; ++co) b.grad[static_cast<size_t>(co)] += dyrow[co];
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels_)
    : channels(channels_), gamma({channels_}), beta({channels_}), running_mean({channels_}),
      running_var({channels_}) {
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
    std::fill(running_var.data.begin(), running_var.data.end(), 1.0);
    gamma.alloc_grad();
    beta.alloc_grad();
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    check_rank4(x, "batchnorm");
    if (x.dim(3) != channels)
        throw InputError("batchnorm: input has " + std::to_string(x.dim(3)) + " channels, expected " +
                         std::to_string(channels));
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int64_t n = static_cast<int64_t>(B) * H * W;

    std::vector<double> mu(static_cast<size_t>(channels), 0.0);
    std::vector<double> var(static_cast<size_t>(channels), 0.0);

    if (mode == Mode::kTrain) {
        for (size_t i = 0; i < x.data.size(); i += static_cast<size_t>(channels))
            for (int c = 0; c < channels; ++c) mu[static_cast<size_t>(c)] += x.data[i + static_cast<size_t>(c)];
        for (int c = 0; c < channels; ++c) mu[static_cast<size_t>(c)] /= static_cast<double>(n);
        for (size_t i = 0; i < x.data.size(); i += static_cast<size_t>(channels))
            for (int c = 0; c < channels; ++c) {
                const double d = x.data[i + static_cast<size_t>(c)] - mu[static_cast<size_t>(c)];
                var[static_cast<size_t>(c)] += d * d;
            }
        for (int c = 0; c < channels; ++c) var[static_cast<size_t>(c)] /= static_cast<double>(n);

        for (int c = 0; c < channels; ++c) {
            running_mean.data[static_cast<size_t>(c)] =
                momentum * running_mean.data[static_cast<size_t>(c)] + (1.0 - momentum) * mu[static_cast<size_t>(c)];
            running_var.data[static_cast<size_t>(c)] =
                momentum * running_var.data[static_cast<size_t>(c)] + (1.0 - momentum) * var[static_cast<size_t>(c)];
        }
        stats_ready = true;
    } else {
        if (!stats_ready)
            throw StateError("batchnorm: inference requested before running statistics exist");
        for (int c = 0; c < channels; ++c) {
            mu[static_cast<size_t>(c)] = running_mean.data[static_cast<size_t>(c)];
            var[static_cast<size_t>(c)] = running_var.data[static_cast<size_t>(c)];
        }
    }

    inv_std_.resize(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c)
        inv_std_[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps);

    Tensor y(x.shape);
    if (mode == Mode::kInfer) {
        // single fused pass, no caches
        std::vector<double> scale(static_cast<size_t>(channels)), shift(static_cast<size_t>(channels));
        for (int c = 0; c < channels; ++c) {
            scale[static_cast<size_t>(c)] = gamma.data[static_cast<size_t>(c)] * inv_std_[static_cast<size_t>(c)];
            shift[static_cast<size_t>(c)] =
                beta.data[static_cast<size_t>(c)] - scale[static_cast<size_t>(c)] * mu[static_cast<size_t>(c)];
        }
        for (size_t i = 0; i < x.data.size(); i += static_cast<size_t>(channels))
            for (int c = 0; c < channels; ++c)
                y.data[i + static_cast<size_t>(c)] =
                    scale[static_cast<size_t>(c)] * x.data[i + static_cast<size_t>(c)] + shift[static_cast<size_t>(c)];
        has_cache_ = false;
        xhat_cache_ = Tensor();
        return y;
    }

    xhat_cache_ = Tensor(x.shape);
    for (size_t i = 0; i < x.data.size(); i += static_cast<size_t>(channels))
        for (int c = 0; c < channels; ++c) {
            const double xh = (x.data[i + static_cast<size_t>(c)] - mu[static_cast<size_t>(c)]) *
                              inv_std_[static_cast<size_t>(c)];
            xhat_cache_.data[i + static_cast<size_t>(c)] = xh;
            y.data[i + static_cast<size_t>(c)] =
                gamma.data[static_cast<size_t>(c)] * xh + beta.data[static_cast<size_t>(c)];
        }
    fwd_mode_ = mode;
    has_cache_ = true;
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    if (!has_cache_) throw StateError("batchnorm: backward before forward");
    const Tensor& xh = xhat_cache_;
    const int64_t n = static_cast<int64_t>(dy.numel()) / channels;

    std::vector<double> sum_dy(static_cast<size_t>(channels), 0.0);
    std::vector<double> sum_dy_xh(static_cast<size_t>(channels), 0.0);
    for (size_t i = 0; i < dy.data.size(); i += static_cast<size_t>(channels))
        for (int c = 0; c < channels; ++c) {
            sum_dy[static_cast<size_t>(c)] += dy.data[i + static_cast<size_t>(c)];
            sum_dy_xh[static_cast<size_t>(c)] +=
                dy.data[i + static_cast<size_t>(c)] * xh.data[i + static_cast<size_t>(c)];
        }
    for (int c = 0; c < channels; ++c) {
        gamma.grad[static_cast<size_t>(c)] += sum_dy_xh[static_cast<size_t>(c)];
        beta.grad[static_cast<size_t>(c)] += sum_dy[static_cast<size_t>(c)];
    }

    Tensor dx(dy.shape);
    if (fwd_mode_ == Mode::kFrozen) {
        // running stats are constants; the map is affine per channel
        for (size_t i = 0; i < dy.data.size(); i += static_cast<size_t>(channels))
            for (int c = 0; c < channels; ++c)
                dx.data[i + static_cast<size_t>(c)] = dy.data[i + static_cast<size_t>(c)] *
                                                      gamma.data[static_cast<size_t>(c)] *
                                                      inv_std_[static_cast<size_t>(c)];
        return dx;
    }

    // train mode: differentiate through the batch statistics
    const double inv_n = 1.0 / static_cast<double>(n);
    for (size_t i = 0; i < dy.data.size(); i += static_cast<size_t>(channels))
        for (int c = 0; c < channels; ++c) {
            const size_t ci = static_cast<size_t>(c);
            const double dxhat = dy.data[i + ci] * gamma.data[ci];
            const double term = static_cast<double>(n) * dxhat -
                                gamma.data[ci] * sum_dy[ci] -
                                xh.data[i + ci] * gamma.data[ci] * sum_dy_xh[ci];
            dx.data[i + ci] = inv_std_[ci] * inv_n * term;
        }
    return dx;
}

// ---------------------------------------------------------------- SEBlock

SEBlock::SEBlock(int channels_, int ratio_)
    : channels(channels_), ratio(ratio_), hidden(channels_ / ratio_),
      w1({channels_, channels_ / ratio_}), b1({channels_ / ratio_}),
      w2({channels_ / ratio_, channels_}), b2({channels_}) {
    if (channels % ratio != 0)
        throw ConfigError("squeeze-excitation: ratio must divide the channel count");
    w1.alloc_grad();
    b1.alloc_grad();
    w2.alloc_grad();
    b2.alloc_grad();
}

void SEBlock::init(Rng& rng) {
    const double l1 = std::sqrt(6.0 / (channels + hidden));
    for (auto& v : w1.data) v = rng.uniform(-l1, l1);
    const double l2 = std::sqrt(6.0 / (hidden + channels));
    for (auto& v : w2.data) v = rng.uniform(-l2, l2);
    std::fill(b1.data.begin(), b1.data.end(), 0.0);
    std::fill(b2.data.begin(), b2.data.end(), 0.0);
}

Tensor SEBlock::forward(const Tensor& x, bool keep_cache) {
    check_rank4(x, "squeeze-excitation");
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (C != channels)
        throw InputError("squeeze-excitation: input has " + std::to_string(C) + " channels, expected " +
                         std::to_string(channels));
    const double inv_hw = 1.0 / (static_cast<double>(H) * W);

    Tensor z({B, C});
    for (int bi = 0; bi < B; ++bi) {
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                const double* xrow = x.data.data() + x.idx4(bi, h, wo, 0);
                double* zrow = z.data.data() + static_cast<int64_t>(bi) * C;
                for (int c = 0; c < C; ++c) zrow[c] += xrow[c];
            }
        double* zrow = z.data.data() + static_cast<int64_t>(bi) * C;
        for (int c = 0; c < C; ++c) zrow[c] *= inv_hw;
    }

    Tensor u({B, hidden});
    for (int bi = 0; bi < B; ++bi)
        for (int j = 0; j < hidden; ++j) {
            double acc = b1.data[static_cast<size_t>(j)];
            for (int c = 0; c < C; ++c)
                acc += z.at2(bi, c) * w1.at2(c, j);
            u.at2(bi, j) = acc;
        }

    Tensor hid({B, hidden});
    for (size_t i = 0; i < u.data.size(); ++i) hid.data[i] = u.data[i] > 0.0 ? u.data[i] : 0.0;

    Tensor s({B, C});
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
            double acc = b2.data[static_cast<size_t>(c)];
            for (int j = 0; j < hidden; ++j) acc += hid.at2(bi, j) * w2.at2(j, c);
            s.at2(bi, c) = 1.0 / (1.0 + std::exp(-acc));
        }

    Tensor y(x.shape);
    for (int bi = 0; bi < B; ++bi) {
        const double* srow = s.data.data() + static_cast<int64_t>(bi) * C;
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                const double* xrow = x.data.data() + x.idx4(bi, h, wo, 0);
                double* yrow = y.data.data() + y.idx4(bi, h, wo, 0);
                for (int c = 0; c < C; ++c) yrow[c] = xrow[c] * srow[c];
            }
    }

    if (keep_cache) {
        x_cache_ = x;
        z_cache_ = std::move(z);
        u_cache_ = std::move(u);
        h_cache_ = std::move(hid);
        s_cache_ = std::move(s);
    } else {
        x_cache_ = Tensor();
    }
    return y;
}

Tensor SEBlock::backward(const Tensor& dy) {
    if (x_cache_.numel() == 0) throw StateError("squeeze-excitation: backward before forward");
    const Tensor& x = x_cache_;
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const double inv_hw = 1.0 / (static_cast<double>(H) * W);

    Tensor dx(x.shape);
    Tensor ds({B, C});
    for (int bi = 0; bi < B; ++bi) {
        const double* srow = s_cache_.data.data() + static_cast<int64_t>(bi) * C;
        double* dsrow = ds.data.data() + static_cast<int64_t>(bi) * C;
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                const double* xrow = x.data.data() + x.idx4(bi, h, wo, 0);
                const double* dyrow = dy.data.data() + dy.idx4(bi, h, wo, 0);
                double* dxrow = dx.data.data() + dx.idx4(bi, h, wo, 0);
                for (int c = 0; c < C; ++c) {
                    dsrow[c] += dyrow[c] * xrow[c];
                    dxrow[c] = dyrow[c] * srow[c];
                }
            }
    }

    Tensor dv({B, C});
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
            const double s = s_cache_.at2(bi, c);
            dv.at2(bi, c) = ds.at2(bi, c) * s * (1.0 - s);
        }

    Tensor dh({B, hidden});
    for (int bi = 0; bi < B; ++bi)
        for (int j = 0; j < hidden; ++j) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c) {
                w2.grad[static_cast<size_t>(j) * C + static_cast<size_t>(c)] +=
                    h_cache_.at2(bi, j) * dv.at2(bi, c);
                acc += w2.at2(j, c) * dv.at2(bi, c);
            }
            dh.at2(bi, j) = acc;
        }
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) b2.grad[static_cast<size_t>(c)] += dv.at2(bi, c);

    Tensor du({B, hidden});
    for (size_t i = 0; i < du.data.size(); ++i)
        du.data[i] = u_cache_.data[i] > 0.0 ? dh.data[i] : 0.0;

    Tensor dz({B, C});
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int j = 0; j < hidden; ++j) {
                w1.grad[static_cast<size_t>(c) * hidden + static_cast<size_t>(j)] +=
                    z_cache_.at2(bi, c) * du.at2(bi, j);
                acc += w1.at2(c, j) * du.at2(bi, j);
            }
            dz.at2(bi, c) = acc;
        }
    for (int bi = 0; bi < B; ++bi)
        for (int j = 0; j < hidden; ++j) b1.grad[static_cast<size_t>(j)] += du.at2(bi, j);

    for (int bi = 0; bi < B; ++bi) {
        const double* dzrow = dz.data.data() + static_cast<int64_t>(bi) * C;
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                double* dxrow = dx.data.data() + dx.idx4(bi, h, wo, 0);
                for (int c = 0; c < C; ++c) dxrow[c] += dzrow[c] * inv_hw;
            }
    }
    return dx;
}

// ---------------------------------------------------------------- SEResidualBlock

SEResidualBlock::SEResidualBlock(int in_channels, int out_channels, int kernel, int se_ratio,
                                 bool with_bn_)
    : conv1(kernel, kernel, in_channels, out_channels),
      conv2(kernel, kernel, out_channels, out_channels),
      bn1(out_channels), bn2(out_channels), se(out_channels, se_ratio), with_bn(with_bn_) {
    if (in_channels != out_channels) shortcut.emplace(1, 1, in_channels, out_channels);
}

void SEResidualBlock::init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (shortcut) shortcut->init(rng);
    se.init(rng);
}

Tensor SEResidualBlock::forward(const Tensor& x, Mode mode) {
    const bool keep = mode != Mode::kInfer;
    Tensor h = conv1.forward(x, keep);
    if (with_bn) h = bn1.forward(h, mode);
    h = relu_forward(h, mask1_);
    h = conv2.forward(h, keep);
    if (with_bn) h = bn2.forward(h, mode);

    Tensor sc = shortcut ? shortcut->forward(x, keep) : x;
    if (h.shape != sc.shape) throw InputError("residual block: branch shapes disagree");
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += sc.data[i];

    h = relu_forward(h, mask2_);
    return se.forward(h, keep);
}

Tensor SEResidualBlock::backward(const Tensor& dy) {
    Tensor d = se.backward(dy);
    d = relu_backward(d, mask2_);

    Tensor d_main = with_bn ? bn2.backward(d) : d;
    d_main = conv2.backward(d_main);
    d_main = relu_backward(d_main, mask1_);
    if (with_bn) d_main = bn1.backward(d_main);
    Tensor dx = conv1.backward(d_main);

    if (shortcut) {
        Tensor dsc = shortcut->backward(d);
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dsc.data[i];
    } else {
        for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += d.data[i];
    }
    return dx;
}

// ---------------------------------------------------------------- MaxPoolTime

Tensor MaxPoolTime::forward(const Tensor& x) {
    check_rank4(x, "max pooling");
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int Wo = W / pool_w;
    if (Wo < 1)
        throw InputError("max pooling: input width " + std::to_string(W) + " smaller than pool size " +
                         std::to_string(pool_w));
    in_shape_ = x.shape;
    Tensor y({B, H, Wo, C});
    argmax_.assign(y.data.size(), 0);
    for (int bi = 0; bi < B; ++bi)
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < Wo; ++wo) {
                double* yrow = y.data.data() + y.idx4(bi, h, wo, 0);
                int32_t* arow = argmax_.data() + y.idx4(bi, h, wo, 0);
                for (int c = 0; c < C; ++c) {
                    double best = x.at4(bi, h, wo * pool_w, c);
                    int32_t best_w = wo * pool_w;
                    for (int k = 1; k < pool_w; ++k) {
                        const double v = x.at4(bi, h, wo * pool_w + k, c);
                        if (v > best) {
                            best = v;
                            best_w = wo * pool_w + k;
                        }
                    }
                    yrow[c] = best;
                    arow[c] = best_w;
                }
            }
    return y;
}

Tensor MaxPoolTime::backward(const Tensor& dy) {
    if (in_shape_.empty()) throw StateError("max pooling: backward before forward");
    Tensor dx(in_shape_);
    const int B = dy.dim(0), H = dy.dim(1), Wo = dy.dim(2), C = dy.dim(3);
    for (int bi = 0; bi < B; ++bi)
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < Wo; ++wo)
                for (int c = 0; c < C; ++c) {
                    const int64_t oi = dy.idx4(bi, h, wo, c);
                    dx.at4(bi, h, argmax_[static_cast<size_t>(oi)], c) += dy.data[static_cast<size_t>(oi)];
                }
    return dx;
}

// ---------------------------------------------------------------- Dropout

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng* rng) {
    if (mode != Mode::kTrain || rate == 0.0) {
        mask_.clear();
        return x;
    }
    if (rng == nullptr) throw StateError("dropout: train mode requires a random source");
    const double keep_scale = 1.0 / (1.0 - rate);
    mask_.resize(x.data.size());
    Tensor y(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double m = rng->uniform() < rate ? 0.0 : keep_scale;
        mask_[i] = m;
        y.data[i] = x.data[i] * m;
    }
    return y;
}

Tensor Dropout::backward(const Tensor& dy) {
    if (mask_.empty()) return dy;  // identity forward
    Tensor dx(dy.shape);
    for (size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = dy.data[i] * mask_[i];
    return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
    check_rank4(x, "global average pooling");
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    in_shape_ = x.shape;
    Tensor y({B, C});
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int bi = 0; bi < B; ++bi) {
        double* yrow = y.data.data() + static_cast<int64_t>(bi) * C;
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                const double* xrow = x.data.data() + x.idx4(bi, h, wo, 0);
                for (int c = 0; c < C; ++c) yrow[c] += xrow[c];
            }
        for (int c = 0; c < C; ++c) yrow[c] *= inv;
    }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    if (in_shape_.empty()) throw StateError("global average pooling: backward before forward");
    Tensor dx(in_shape_);
    const int B = in_shape_[0], H = in_shape_[1], W = in_shape_[2], C = in_shape_[3];
    const double inv = 1.0 / (static_cast<double>(H) * W);
    for (int bi = 0; bi < B; ++bi) {
        const double* dyrow = dy.data.data() + static_cast<int64_t>(bi) * C;
        for (int h = 0; h < H; ++h)
            for (int wo = 0; wo < W; ++wo) {
                double* dxrow = dx.data.data() + dx.idx4(bi, h, wo, 0);
                for (int c = 0; c < C; ++c) dxrow[c] = dyrow[c] * inv;
            }
    }
    return dx;
}

// ---------------------------------------------------------------- Dense

Dense::Dense(int in_dim_, int out_dim_)
    : in_dim(in_dim_), out_dim(out_dim_), w({in_dim_, out_dim_}), b({out_dim_}) {
    w.alloc_grad();
    b.alloc_grad();
}

void Dense::init(Rng& rng) {
    const double limit = std::sqrt(6.0 / (in_dim + out_dim));
    for (auto& v : w.data) v = rng.uniform(-limit, limit);
    std::fill(b.data.begin(), b.data.end(), 0.0);
}

Tensor Dense::forward(const Tensor& x, bool keep_cache) {
    if (x.rank() != 2 || x.dim(1) != in_dim)
        throw InputError("dense: expected B x " + std::to_string(in_dim) + " input");
    const int B = x.dim(0);
    Tensor y({B, out_dim});
    for (int bi = 0; bi < B; ++bi)
        for (int o = 0; o < out_dim; ++o) {
            double acc = b.data[static_cast<size_t>(o)];
            for (int i = 0; i < in_dim; ++i) acc += x.at2(bi, i) * w.at2(i, o);
            y.at2(bi, o) = acc;
        }
    if (keep_cache) x_cache_ = x;
    else x_cache_ = Tensor();
    return y;
}

Tensor Dense::backward(const Tensor& dy) {
    if (x_cache_.numel() == 0) throw StateError("dense: backward before forward");
    const Tensor& x = x_cache_;
    const int B = x.dim(0);
    Tensor dx(x.shape);
    for (int bi = 0; bi < B; ++bi)
        for (int i = 0; i < in_dim; ++i) {
            double acc = 0.0;
            for (int o = 0; o < out_dim; ++o) {
                w.grad[static_cast<size_t>(i) * out_dim + static_cast<size_t>(o)] +=
                    x.at2(bi, i) * dy.at2(bi, o);
                acc += w.at2(i, o) * dy.at2(bi, o);
            }
            dx.at2(bi, i) = acc;
        }
    for (int bi = 0; bi < B; ++bi)
        for (int o = 0; o < out_dim; ++o) b.grad[static_cast<size_t>(o)] += dy.at2(bi, o);
    return dx;
}

// ---------------------------------------------------------------- loss

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw InputError("softmax: expected a rank-2 tensor");
    const int B = logits.dim(0), K = logits.dim(1);
    Tensor p(logits.shape);
    for (int bi = 0; bi < B; ++bi) {
        double mx = logits.at2(bi, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at2(bi, k));
        double sum = 0.0;
        for (int k = 0; k < K; ++k) {
            const double e = std::exp(logits.at2(bi, k) - mx);
            p.at2(bi, k) = e;
            sum += e;
        }
        for (int k = 0; k < K; ++k) p.at2(bi, k) /= sum;
    }
    return p;
}

namespace {
constexpr double kProbFloor = 1e-12;
}

double focal_loss(const Tensor& probs, const std::vector<int>& targets, double alpha, double gamma) {
    if (probs.rank() != 2) throw InputError("focal loss: expected B x K probabilities");
    const int B = probs.dim(0), K = probs.dim(1);
    if (static_cast<int>(targets.size()) != B)
        throw InputError("focal loss: batch size mismatch between probabilities and targets");
    double total = 0.0;
    for (int bi = 0; bi < B; ++bi) {
        const int t = targets[static_cast<size_t>(bi)];
        if (t < 0 || t >= K)
            throw InputError("focal loss: target id " + std::to_string(t) + " outside [0, " +
                             std::to_string(K) + ")");
        const double p = std::clamp(probs.at2(bi, t), kProbFloor, 1.0);
        total += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    }
    return total / B;
}

Tensor focal_loss_grad_logits(const Tensor& probs, const std::vector<int>& targets, double alpha,
                              double gamma) {
    const int B = probs.dim(0), K = probs.dim(1);
    if (static_cast<int>(targets.size()) != B)
        throw InputError("focal loss: batch size mismatch between probabilities and targets");
    Tensor dl(probs.shape);
    for (int bi = 0; bi < B; ++bi) {
        const int t = targets[static_cast<size_t>(bi)];
        if (t < 0 || t >= K)
            throw InputError("focal loss: target id " + std::to_string(t) + " outside [0, " +
                             std::to_string(K) + ")");
        const double pt = probs.at2(bi, t);
        if (pt < kProbFloor) continue;  // loss saturated at the clamp, zero gradient
        const double p = std::min(pt, 1.0);
        const double one_minus = 1.0 - p;
        double dldp;
        if (gamma == 0.0) {
            dldp = -alpha / p;
        } else if (one_minus > 0.0) {
            dldp = alpha * gamma * std::pow(one_minus, gamma - 1.0) * std::log(p) -
                   alpha * std::pow(one_minus, gamma) / p;
        } else {
            dldp = 0.0;
        }
        for (int k = 0; k < K; ++k) {
            const double delta = k == t ? 1.0 : 0.0;
            dl.at2(bi, k) = dldp * pt * (delta - probs.at2(bi, k)) / B;
        }
    }
    return dl;
}

// ---------------------------------------------------------------- Model

Model::Model(const ModelConfig& cfg_)
    : cfg(cfg_),
      block1(cfg_.in_channels, cfg_.channels, cfg_.kernel, cfg_.se_ratio, cfg_.with_batchnorm),
      block2(cfg_.channels, cfg_.channels, cfg_.kernel, cfg_.se_ratio, cfg_.with_batchnorm),
      pool1(cfg_.pool_w), pool2(cfg_.pool_w),
      drop1(cfg_.dropout_rate), drop2(cfg_.dropout_rate),
      fc(cfg_.channels, cfg_.n_classes) {}

void Model::init_params(Rng& rng) {
    block1.init(rng);
    block2.init(rng);
    fc.init(rng);
}

Tensor Model::forward(const Tensor& x, Mode mode, Rng* rng) {
    check_rank4(x, "model");
    Tensor h = block1.forward(x, mode);
    h = pool1.forward(h);
    h = drop1.forward(h, mode, rng);
    h = block2.forward(h, mode);
    h = pool2.forward(h);
    h = drop2.forward(h, mode, rng);
    h = gap.forward(h);
    h = fc.forward(h, mode != Mode::kInfer);
    last_mode_ = mode;
    has_forward_cache_ = mode != Mode::kInfer;
    return softmax_rows(h);
}

Tensor Model::backward(const Tensor& dlogits) {
    if (!has_forward_cache_)
        throw StateError("model: backward requires a train or frozen forward pass first");
    Tensor d = fc.backward(dlogits);
    d = gap.backward(d);
    d = drop2.backward(d);
    d = pool2.backward(d);
    d = block2.backward(d);
    d = drop1.backward(d);
    d = pool1.backward(d);
    d = block1.backward(d);
    return d;
}

namespace {

void block_params(const std::string& prefix, SEResidualBlock& blk, bool with_bn, bool with_running,
                  std::vector<ParamRef>& out) {
    out.push_back({prefix + ".conv1.w", &blk.conv1.w});
    out.push_back({prefix + ".conv1.b", &blk.conv1.b});
    if (with_bn) {
        out.push_back({prefix + ".bn1.gamma", &blk.bn1.gamma});
        out.push_back({prefix + ".bn1.beta", &blk.bn1.beta});
        if (with_running) {
            out.push_back({prefix + ".bn1.running_mean", &blk.bn1.running_mean});
            out.push_back({prefix + ".bn1.running_var", &blk.bn1.running_var});
        }
    }
    out.push_back({prefix + ".conv2.w", &blk.conv2.w});
    out.push_back({prefix + ".conv2.b", &blk.conv2.b});
    if (with_bn) {
        out.push_back({prefix + ".bn2.gamma", &blk.bn2.gamma});
        out.push_back({prefix + ".bn2.beta", &blk.bn2.beta});
        if (with_running) {
            out.push_back({prefix + ".bn2.running_mean", &blk.bn2.running_mean});
            out.push_back({prefix + ".bn2.running_var", &blk.bn2.running_var});
        }
    }
    if (blk.shortcut) {
        out.push_back({prefix + ".shortcut.w", &blk.shortcut->w});
        out.push_back({prefix + ".shortcut.b", &blk.shortcut->b});
    }
    out.push_back({prefix + ".se.w1", &blk.se.w1});
    out.push_back({prefix + ".se.b1", &blk.se.b1});
    out.push_back({prefix + ".se.w2", &blk.se.w2});
    out.push_back({prefix + ".se.b2", &blk.se.b2});
}

}  // namespace

std::vector<ParamRef> Model::parameters() {
    std::vector<ParamRef> out;
    block_params("block1", block1, cfg.with_batchnorm, false, out);
    block_params("block2", block2, cfg.with_batchnorm, false, out);
    out.push_back({"fc.w", &fc.w});
    out.push_back({"fc.b", &fc.b});
    return out;
}

std::vector<ParamRef> Model::state_tensors() {
    std::vector<ParamRef> out;
    block_params("block1", block1, cfg.with_batchnorm, true, out);
    block_params("block2", block2, cfg.with_batchnorm, true, out);
    out.push_back({"fc.w", &fc.w});
    out.push_back({"fc.b", &fc.b});
    return out;
}

void Model::zero_grad() {
    for (auto& p : parameters()) p.tensor->zero_grad();
}

void Model::alloc_grads() {
    for (auto& p : parameters())
        if (!p.tensor->has_grad()) p.tensor->alloc_grad();
}

int64_t Model::trainable_param_count() {
    int64_t n = 0;
    for (auto& p : parameters()) n += p.tensor->numel();
    return n;
}

// ---------------------------------------------------------------- Adam

void adam_step(const std::vector<ParamRef>& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].tensor->data.size(), 0.0);
            state.v[i].assign(params[i].tensor->data.size(), 0.0);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            const double g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace asc
