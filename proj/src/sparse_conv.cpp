#include "vsparse/sparse_conv.hpp"

#include <algorithm>
#include <cmath>

#include "vsparse/params.hpp"

namespace vsparse {

std::vector<Offset> cube_offsets(int kernel) {
  std::vector<Offset> out;
  int lo = 0;
  int hi = 0;
  switch (kernel) {
    case 1: lo = 0; hi = 0; break;
    case 2: lo = 0; hi = 1; break;
    case 3: lo = -1; hi = 1; break;
    default: throw std::invalid_argument("cube_offsets: unsupported kernel " + std::to_string(kernel));
  }
  for (int dx = lo; dx <= hi; ++dx)
    for (int dy = lo; dy <= hi; ++dy)
      for (int dz = lo; dz <= hi; ++dz) out.push_back({dx, dy, dz});
  return out;
}

namespace {

void finalize(KernelMap& km) {
  km.in_rows_by_offset.assign(km.offsets.size(), {});
  km.out_rows_by_offset.assign(km.offsets.size(), {});
  for (const auto& t : km.triples) {
    km.in_rows_by_offset[t.offset].push_back(t.in_row);
    km.out_rows_by_offset[t.offset].push_back(t.out_row);
  }
}

}  // namespace

KernelMap build_kernel_map(std::span<const Coord> in, const CoordIndex& in_index,
                           std::span<const Coord> out, std::vector<Offset> offsets,
                           StrideRatio ratio) {
  KernelMap km;
  km.offsets = std::move(offsets);
  km.n_in = in.size();
  km.n_out = out.size();
  km.triples.reserve(out.size() * (ratio == StrideRatio::Up ? 1 : km.offsets.size()));
  for (std::size_t j = 0; j < out.size(); ++j) {
    const std::int64_t ox = out[j].x;
    const std::int64_t oy = out[j].y;
    const std::int64_t oz = out[j].z;
    for (std::size_t k = 0; k < km.offsets.size(); ++k) {
      const Offset& o = km.offsets[k];
      std::optional<std::uint32_t> row;
      switch (ratio) {
        case StrideRatio::Same:
          row = in_index.find(ox + o.dx, oy + o.dy, oz + o.dz);
          break;
        case StrideRatio::Down:
          row = in_index.find(2 * ox + o.dx, 2 * oy + o.dy, 2 * oz + o.dz);
          break;
        case StrideRatio::Up: {
          const std::int64_t px = ox - o.dx;
          const std::int64_t py = oy - o.dy;
          const std::int64_t pz = oz - o.dz;
          if (px < 0 || py < 0 || pz < 0 || px % 2 || py % 2 || pz % 2) break;
          row = in_index.find(px / 2, py / 2, pz / 2);
          break;
        }
        default:
          throw std::invalid_argument("build_kernel_map: unknown stride ratio");
      }
      if (row) {
        km.triples.push_back({*row, static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(k)});
      }
    }
  }
  finalize(km);
  return km;
}

KernelMap build_kernel_map(std::span<const Coord> in, std::span<const Coord> out,
                           std::vector<Offset> offsets, StrideRatio ratio) {
  return build_kernel_map(in, CoordIndex(in), out, std::move(offsets), ratio);
}

std::vector<Coord> downsample_coords(std::span<const Coord> coords) {
  std::vector<Coord> out;
  out.reserve(coords.size());
  for (const Coord& c : coords) out.push_back({c.x / 2, c.y / 2, c.z / 2});
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Coord> upsample_coords(std::span<const Coord> coords, std::uint32_t out_stride,
                                   Dims dims) {
  std::vector<Coord> out;
  out.reserve(coords.size() * 8);
  for (const Coord& q : coords) {
    for (std::uint32_t dx = 0; dx < 2; ++dx)
      for (std::uint32_t dy = 0; dy < 2; ++dy)
        for (std::uint32_t dz = 0; dz < 2; ++dz) {
          const Coord c{2 * q.x + dx, 2 * q.y + dy, 2 * q.z + dz};
          if (static_cast<std::uint64_t>(c.x) * out_stride < dims.h &&
              static_cast<std::uint64_t>(c.y) * out_stride < dims.w &&
              static_cast<std::uint64_t>(c.z) * out_stride < dims.d) {
            out.push_back(c);
          }
        }
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
ConvParams<T> init_conv(int kernel_volume, Eigen::Index cin, Eigen::Index cout,
                        std::mt19937_64& rng) {
  ConvParams<T> p;
  p.kernel_volume = kernel_volume;
  const double bound = 1.0 / std::sqrt(static_cast<double>(kernel_volume * cin));
  p.weight = uniform_matrix<T>(kernel_volume * cin, cout, bound, rng);
  p.bias = Mat<T>::Zero(1, cout);
  return p;
}

template <typename T>
Mat<T> conv_forward(const Mat<T>& x, const Mat<T>& weight, const Mat<T>& bias,
                    const KernelMap& km) {
  const Eigen::Index k_count = static_cast<Eigen::Index>(km.offsets.size());
  const Eigen::Index cin = x.cols();
  const Eigen::Index cout = weight.cols();
  if (weight.rows() != k_count * cin) {
    throw ad::ShapeError("sparse_conv: weight rows " + std::to_string(weight.rows()) +
                         " != offsets " + std::to_string(k_count) + " x in-channels " +
                         std::to_string(cin));
  }
  if (bias.rows() != 1 || bias.cols() != cout) {
    throw ad::ShapeError("sparse_conv: bias must be 1x" + std::to_string(cout));
  }
  if (static_cast<std::size_t>(x.rows()) != km.n_in) {
    throw ad::ShapeError("sparse_conv: input has " + std::to_string(x.rows()) +
                         " rows, kernel map expects " + std::to_string(km.n_in));
  }
  Mat<T> out(static_cast<Eigen::Index>(km.n_out), cout);
  out.rowwise() = bias.row(0);
  Mat<T> gathered;
  Mat<T> partial;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto& in_rows = km.in_rows_by_offset[static_cast<std::size_t>(k)];
    const auto& out_rows = km.out_rows_by_offset[static_cast<std::size_t>(k)];
    const Eigen::Index p = static_cast<Eigen::Index>(in_rows.size());
    if (p == 0) continue;
    gathered.resize(p, cin);
    for (Eigen::Index r = 0; r < p; ++r) gathered.row(r) = x.row(in_rows[static_cast<std::size_t>(r)]);
    partial.noalias() = gathered * weight.middleRows(k * cin, cin);
    for (Eigen::Index r = 0; r < p; ++r) out.row(out_rows[static_cast<std::size_t>(r)]) += partial.row(r);
  }
  return out;
}

template <typename T>
void conv_backward(const Mat<T>& x, const Mat<T>& weight, const KernelMap& km,
                   const Mat<T>& grad_out, Mat<T>* grad_x, Mat<T>* grad_w, Mat<T>* grad_b) {
  const Eigen::Index cin = x.cols();
  const Eigen::Index cout = weight.cols();
  if (grad_b) *grad_b += grad_out.colwise().sum();
  if (!grad_x && !grad_w) return;
  Mat<T> g_gathered;
  Mat<T> x_gathered;
  Mat<T> partial;
  for (std::size_t k = 0; k < km.offsets.size(); ++k) {
    const auto& in_rows = km.in_rows_by_offset[k];
    const auto& out_rows = km.out_rows_by_offset[k];
    const Eigen::Index p = static_cast<Eigen::Index>(in_rows.size());
    if (p == 0) continue;
    const Eigen::Index kk = static_cast<Eigen::Index>(k);
    g_gathered.resize(p, cout);
    for (Eigen::Index r = 0; r < p; ++r) g_gathered.row(r) = grad_out.row(out_rows[static_cast<std::size_t>(r)]);
    if (grad_w) {
      x_gathered.resize(p, cin);
      for (Eigen::Index r = 0; r < p; ++r) x_gathered.row(r) = x.row(in_rows[static_cast<std::size_t>(r)]);
      grad_w->middleRows(kk * cin, cin).noalias() += x_gathered.transpose() * g_gathered;
    }
    if (grad_x) {
      partial.noalias() = g_gathered * weight.middleRows(kk * cin, cin).transpose();
      for (Eigen::Index r = 0; r < p; ++r) grad_x->row(in_rows[static_cast<std::size_t>(r)]) += partial.row(r);
    }
  }
}

template <typename T>
ad::Var sparse_conv(ad::Tape<T>& tape, ad::Var x, ad::Var weight, ad::Var bias,
                    std::shared_ptr<const KernelMap> km) {
  Mat<T> out = conv_forward(tape.value(x), tape.value(weight), tape.value(bias), *km);
  return tape.push(ad::OpKind::SparseConv, {x, weight, bias}, std::move(out),
                   [x, weight, bias, km](ad::Tape<T>& tp, const Mat<T>& g) {
                     conv_backward(tp.value(x), tp.value(weight), *km, g, tp.grad_buffer(x),
                                   tp.grad_buffer(weight), tp.grad_buffer(bias));
                   });
}

namespace {

template <typename T>
void check_in_channels(const char* op, const SparseTensor<T>& st, const ConvParams<T>& p) {
  if (st.features.cols() * p.kernel_volume != p.weight.rows()) {
    throw ad::ShapeError(std::string(op) + ": tensor has " + std::to_string(st.features.cols()) +
                         " channels, weights expect " + std::to_string(p.in_channels()));
  }
}

}  // namespace

template <typename T>
SparseTensor<T> submanifold_conv(const SparseTensor<T>& st, const ConvParams<T>& params) {
  check_in_channels("submanifold_conv", st, params);
  const int kernel = params.kernel_volume == 27 ? 3 : 1;
  if (params.kernel_volume != 27 && params.kernel_volume != 1) {
    throw ad::ShapeError("submanifold_conv: kernel volume must be 27 or 1");
  }
  const KernelMap km = build_kernel_map(st.coords, st.coords, cube_offsets(kernel), StrideRatio::Same);
  SparseTensor<T> out;
  out.coords = st.coords;
  out.stride = st.stride;
  out.dims = st.dims;
  out.features = conv_forward(st.features, params.weight, params.bias, km);
  return out;
}

template <typename T>
SparseTensor<T> down_conv(const SparseTensor<T>& st, const ConvParams<T>& params) {
  check_in_channels("down_conv", st, params);
  if (params.kernel_volume != 8) throw ad::ShapeError("down_conv: kernel volume must be 8");
  SparseTensor<T> out;
  out.coords = downsample_coords(st.coords);
  out.stride = st.stride * 2;
  out.dims = st.dims;
  const KernelMap km = build_kernel_map(st.coords, out.coords, cube_offsets(2), StrideRatio::Down);
  out.features = conv_forward(st.features, params.weight, params.bias, km);
  return out;
}

template <typename T>
SparseTensor<T> up_conv(const SparseTensor<T>& st, const ConvParams<T>& params) {
  check_in_channels("up_conv", st, params);
  if (params.kernel_volume != 8) throw ad::ShapeError("up_conv: kernel volume must be 8");
  if (st.stride < 2 || st.stride % 2 != 0) {
    throw std::invalid_argument("up_conv: tensor stride " + std::to_string(st.stride) +
                                " cannot be upsampled further");
  }
  SparseTensor<T> out;
  out.stride = st.stride / 2;
  out.dims = st.dims;
  out.coords = upsample_coords(st.coords, out.stride, st.dims);
  const KernelMap km = build_kernel_map(st.coords, out.coords, cube_offsets(2), StrideRatio::Up);
  out.features = conv_forward(st.features, params.weight, params.bias, km);
  return out;
}

int clamp_groups(int default_groups, Eigen::Index channels) {
  return static_cast<int>(std::min<Eigen::Index>(default_groups, channels));
}

template <typename T>
SparseTensor<T> group_norm(const SparseTensor<T>& st, const Mat<T>& gain, const Mat<T>& bias,
                           int groups) {
  if (groups <= 0 || st.features.cols() % groups != 0) {
    throw ad::ShapeError("group_norm: channels " + std::to_string(st.features.cols()) +
                         " not divisible by " + std::to_string(groups) + " groups");
  }
  if (st.coords.empty()) return st;
  ad::Tape<T> tape;
  ad::Var x = tape.leaf(st.features);
  ad::Var g = tape.leaf(gain);
  ad::Var b = tape.leaf(bias);
  ad::Var y = ad::add_row(tape, ad::mul_row(tape, ad::group_norm(tape, x, groups), g), b);
  SparseTensor<T> out = st;
  out.features = tape.value(y);
  return out;
}

template <typename T>
ResBlockParams<T> init_res_block(Eigen::Index cin, Eigen::Index cout, int groups,
                                 std::mt19937_64& rng) {
  ResBlockParams<T> p;
  p.conv1 = init_conv<T>(27, cin, cout, rng);
  p.conv2 = init_conv<T>(27, cout, cout, rng);
  p.gn1_gain = Mat<T>::Ones(1, cout);
  p.gn1_bias = Mat<T>::Zero(1, cout);
  p.gn2_gain = Mat<T>::Ones(1, cout);
  p.gn2_bias = Mat<T>::Zero(1, cout);
  if (cin != cout) p.proj = init_conv<T>(1, cin, cout, rng);
  p.groups = clamp_groups(groups, cout);
  return p;
}

template <typename T>
ad::Var res_block(ad::Tape<T>& t, ad::Var x, const ResBlockVars& p,
                  const std::shared_ptr<const KernelMap>& sub_map) {
  ad::Var h = sparse_conv(t, x, p.w1, p.b1, sub_map);
  h = ad::add_row(t, ad::mul_row(t, ad::group_norm(t, h, p.groups), p.g1), p.beta1);
  h = ad::relu(t, h);
  h = sparse_conv(t, h, p.w2, p.b2, sub_map);
  h = ad::add_row(t, ad::mul_row(t, ad::group_norm(t, h, p.groups), p.g2), p.beta2);
  ad::Var skip = x;
  if (p.proj_w.valid()) skip = ad::add_row(t, ad::matmul(t, x, p.proj_w), p.proj_b);
  return ad::relu(t, ad::add(t, skip, h));
}

template <typename T>
SparseTensor<T> res_sparse_block(const SparseTensor<T>& st, const ResBlockParams<T>& params) {
  check_in_channels("res_sparse_block", st, params.conv1);
  auto km = std::make_shared<const KernelMap>(
      build_kernel_map(st.coords, st.coords, cube_offsets(3), StrideRatio::Same));
  ad::Tape<T> t;
  ResBlockVars v;
  v.w1 = t.leaf(params.conv1.weight);
  v.b1 = t.leaf(params.conv1.bias);
  v.g1 = t.leaf(params.gn1_gain);
  v.beta1 = t.leaf(params.gn1_bias);
  v.w2 = t.leaf(params.conv2.weight);
  v.b2 = t.leaf(params.conv2.bias);
  v.g2 = t.leaf(params.gn2_gain);
  v.beta2 = t.leaf(params.gn2_bias);
  if (params.proj) {
    v.proj_w = t.leaf(params.proj->weight);
    v.proj_b = t.leaf(params.proj->bias);
  }
  v.groups = params.groups;
  ad::Var y = res_block(t, t.leaf(st.features), v, km);
  SparseTensor<T> out = st;
  out.features = t.value(y);
  return out;
}

#define VSPARSE_CONV_INSTANTIATE(T)                                                             \
  template ConvParams<T> init_conv<T>(int, Eigen::Index, Eigen::Index, std::mt19937_64&);       \
  template Mat<T> conv_forward<T>(const Mat<T>&, const Mat<T>&, const Mat<T>&, const KernelMap&); \
  template void conv_backward<T>(const Mat<T>&, const Mat<T>&, const KernelMap&, const Mat<T>&, \
                                 Mat<T>*, Mat<T>*, Mat<T>*);                                    \
  template ad::Var sparse_conv<T>(ad::Tape<T>&, ad::Var, ad::Var, ad::Var,                      \
                                  std::shared_ptr<const KernelMap>);                            \
  template SparseTensor<T> submanifold_conv<T>(const SparseTensor<T>&, const ConvParams<T>&);   \
  template SparseTensor<T> down_conv<T>(const SparseTensor<T>&, const ConvParams<T>&);          \
  template SparseTensor<T> up_conv<T>(const SparseTensor<T>&, const ConvParams<T>&);            \
  template SparseTensor<T> group_norm<T>(const SparseTensor<T>&, const Mat<T>&, const Mat<T>&, int); \
  template ResBlockParams<T> init_res_block<T>(Eigen::Index, Eigen::Index, int, std::mt19937_64&); \
  template ad::Var res_block<T>(ad::Tape<T>&, ad::Var, const ResBlockVars&,                     \
                                const std::shared_ptr<const KernelMap>&);                       \
  template SparseTensor<T> res_sparse_block<T>(const SparseTensor<T>&, const ResBlockParams<T>&);

VSPARSE_CONV_INSTANTIATE(float)
VSPARSE_CONV_INSTANTIATE(double)

#undef VSPARSE_CONV_INSTANTIATE

}  // namespace vsparse
