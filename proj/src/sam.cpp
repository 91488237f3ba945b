#include "agsa/sam.hpp"

#include <cmath>

#include "agsa/error.hpp"

namespace agsa::sam {

using namespace agsa::ad;

namespace {

void collect_direction(const SamDirection& d, nn::ParamList& out, const std::string& prefix) {
  d.query.collect(out, prefix + ".query");
  d.key.collect(out, prefix + ".key");
  d.value.collect(out, prefix + ".value");
  d.proj.collect(out, prefix + ".proj");
}

SamDirection init_direction(std::size_t half, Rng& rng) {
  SamDirection d;
  d.query = nn::init_conv1x1(half, half, rng);
  d.key = nn::init_conv1x1(half, half, rng);
  d.value = nn::init_conv1x1(half, half, rng);
  d.proj = nn::zero_conv1x1(half, half);
  return d;
}

void check_config(const SamConfig& c) {
  if (c.channels == 0 || c.channels % 2 != 0) {
    throw ConfigError("stereo attention needs an even channel count, got " + std::to_string(c.channels));
  }
  if (c.heads == 0 || (c.channels / 2) % c.heads != 0) {
    throw ConfigError("stereo attention half width " + std::to_string(c.channels / 2) + " not divisible by " +
                      std::to_string(c.heads) + " heads");
  }
}

}  // namespace

void SamParams::collect(nn::ParamList& out, const std::string& prefix) const {
  if (config.shared) {
    collect_direction(left, out, prefix + ".shared");
  } else {
    collect_direction(left, out, prefix + ".left");
    collect_direction(right, out, prefix + ".right");
  }
}

SamParams init_sam(const SamConfig& config, Rng& rng) {
  check_config(config);
  SamParams p;
  p.config = config;
  const std::size_t half = config.channels / 2;
  p.left = init_direction(half, rng);
  p.right = config.shared ? p.left : init_direction(half, rng);
  return p;
}

std::pair<Tensor, Tensor> channel_split(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("channel_split expects (B,C,H,W), got " + to_string(x.shape()));
  if (x.dim(1) % 2 != 0) throw ConfigError("channel_split needs an even channel count, got " + to_string(x.shape()));
  const std::size_t half = x.dim(1) / 2;
  return {slice(x, 1, 0, half), slice(x, 1, half, half)};
}

Tensor cross_attend(const SamDirection& params, std::size_t heads, const Tensor& x_q, const Tensor& x_kv) {
  if (x_q.shape() != x_kv.shape() || x_q.rank() != 4) {
    throw ShapeError("cross_attend: halves must share a (B,C/2,H,W) shape, got " + to_string(x_q.shape()) + " and " +
                     to_string(x_kv.shape()));
  }
  const std::size_t b = x_q.dim(0), c = x_q.dim(1), h = x_q.dim(2), w = x_q.dim(3);
  const std::size_t n = h * w;
  if (heads == 0 || c % heads != 0) throw ConfigError("cross_attend: width not divisible by head count");
  const std::size_t dh = c / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor q = reshape(nn::conv1x1(params.query, x_q), {b, c, n});
  const Tensor k = reshape(nn::conv1x1(params.key, x_kv), {b, c, n});
  const Tensor v = reshape(nn::conv1x1(params.value, x_kv), {b, c, n});

  std::vector<Tensor> outs;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Tensor qh = heads == 1 ? q : slice(q, 1, hd * dh, dh);
    const Tensor kh = heads == 1 ? k : slice(k, 1, hd * dh, dh);
    const Tensor vh = heads == 1 ? v : slice(v, 1, hd * dh, dh);
    // scores[i][j] = <q_i, k_j>, rows over query tokens
    const Tensor weights = softmax(scale(bmm(qh, kh, true, false), inv_sqrt));
    outs.push_back(bmm(vh, weights, false, true));  // (B, dh, N)
  }
  const Tensor attended = heads == 1 ? outs[0] : concat(outs, 1);
  return add(nn::conv1x1(params.proj, reshape(attended, {b, c, h, w})), x_q);
}

Tensor sam_forward(const SamParams& params, const Tensor& x) {
  check_config(params.config);
  if (x.rank() != 4 || x.dim(1) != params.config.channels) {
    throw ConfigError("stereo attention configured for " + std::to_string(params.config.channels) +
                      " channels, got input " + to_string(x.shape()));
  }
  const auto [x_left, x_right] = channel_split(x);
  const Tensor left_hat = cross_attend(params.left, params.config.heads, x_left, x_right);
  const Tensor right_hat = cross_attend(params.config.shared ? params.left : params.right, params.config.heads,
                                        x_right, x_left);
  return concat({left_hat, right_hat}, 1);
}

Tensor swap_halves(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) % 2 != 0) throw ShapeError("swap_halves expects (B,C,H,W) with even C");
  const std::size_t b = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3), half = c / 2;
  std::vector<double> out(x.size());
  const auto src = x.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t from = (ch + half) % c;
      std::copy_n(src.data() + (n * c + from) * plane, plane, out.data() + (n * c + ch) * plane);
    }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace agsa::sam
