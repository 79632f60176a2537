#include "sparseflow/net.hpp"

#include "sparseflow/error.hpp"
#include "sparseflow/rng.hpp"

#include <cmath>
#include <string>

namespace sparseflow {
namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajorMatrix>;
using Weights = Eigen::Map<RowMajorMatrix>;

ConstWeights weights_of(const ParamVector& p, const LayerBlock& b) {
  return ConstWeights(p.data() + b.weight_offset, static_cast<Eigen::Index>(b.rows),
                      static_cast<Eigen::Index>(b.cols));
}

Eigen::Map<const Eigen::VectorXd> bias_of(const ParamVector& p, const LayerBlock& b) {
  return {p.data() + b.bias_offset, static_cast<Eigen::Index>(b.rows)};
}

// Replaces pre-activations in `m` by activations and writes sigma'(a) into s1.
void activate(Activation act, Eigen::MatrixXd& m, Eigen::MatrixXd& s1) {
  auto a = m.array();
  switch (act) {
    case Activation::sigmoid:
      m = (1.0 + (-a).exp()).inverse().matrix();
      s1 = (m.array() * (1.0 - m.array())).matrix();
      break;
    case Activation::tanh:
      m = a.tanh().matrix();
      s1 = (1.0 - m.array().square()).matrix();
      break;
    case Activation::relu:
      s1 = (a > 0.0).cast<double>().matrix();
      m = a.max(0.0).matrix();
      break;
    case Activation::softplus:
      s1 = (1.0 + (-a).exp()).inverse().matrix();
      m = (a.max(0.0) + (-a.abs()).exp().log1p()).matrix();
      break;
  }
}

// sigma''(a) expressed through the stored activation h and sigma'(a).
void second_derivative(Activation act, const Eigen::MatrixXd& h, const Eigen::MatrixXd& s1,
                       Eigen::MatrixXd& s2) {
  switch (act) {
    case Activation::sigmoid:
      s2 = (s1.array() * (1.0 - 2.0 * h.array())).matrix();
      break;
    case Activation::tanh:
      s2 = (-2.0 * h.array() * s1.array()).matrix();
      break;
    case Activation::relu:
      s2.setZero(h.rows(), h.cols());
      break;
    case Activation::softplus:
      s2 = (s1.array() * (1.0 - s1.array())).matrix();
      break;
  }
}

void check_params(const ParamLayout& layout, const ParamVector& params) {
  if (static_cast<std::size_t>(params.size()) != layout.size()) {
    throw ContractError("parameter vector has " + std::to_string(params.size()) +
                        " entries, network expects " + std::to_string(layout.size()));
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
  }
  return "unknown";
}

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw ContractError("unknown activation '" + std::string(name) + "'");
}

MlpSpec MlpSpec::for_dimension(std::size_t dim, const std::vector<std::size_t>& hidden,
                               Activation activation) {
  MlpSpec spec;
  spec.layer_sizes.push_back(dim + 1);
  spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
  spec.layer_sizes.push_back(dim);
  spec.activation = activation;
  spec.validate();
  return spec;
}

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ContractError("MlpSpec needs at least two layer sizes");
  for (auto w : layer_sizes) {
    if (w == 0) throw ContractError("MlpSpec layer widths must be positive");
  }
  if (layer_sizes.front() != layer_sizes.back() + 1) {
    throw ContractError("MlpSpec input width must be output width + 1 (time is concatenated)");
  }
}

ParamLayout::ParamLayout(const MlpSpec& spec) {
  spec.validate();
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
    LayerBlock b;
    b.cols = spec.layer_sizes[l];
    b.rows = spec.layer_sizes[l + 1];
    b.weight_offset = offset;
    offset += b.rows * b.cols;
    b.bias_offset = offset;
    offset += b.rows;
    weight_count_ += b.rows * b.cols;
    layers_.push_back(b);
  }
  size_ = offset;
}

bool ParamLayout::is_weight(std::size_t index) const {
  for (const auto& b : layers_) {
    if (index >= b.weight_offset && index < b.bias_offset) return true;
  }
  return false;
}

Mask::Mask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto& b : bits_) b = b != 0 ? 1 : 0;
}

Mask Mask::ones(std::size_t n) { return Mask(std::vector<std::uint8_t>(n, 1)); }
Mask Mask::zeros(std::size_t n) { return Mask(std::vector<std::uint8_t>(n, 0)); }

std::size_t Mask::count() const {
  std::size_t c = 0;
  for (auto b : bits_) c += b;
  return c;
}

bool Mask::subset_of(const Mask& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] && !other.bits_[i]) return false;
  }
  return true;
}

Eigen::VectorXd Mask::as_vector() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(bits_.size()));
  for (std::size_t i = 0; i < bits_.size(); ++i) v[static_cast<Eigen::Index>(i)] = bits_[i];
  return v;
}

ParamVector mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  const ParamLayout layout(spec);
  ParamVector p = ParamVector::Zero(static_cast<Eigen::Index>(layout.size()));
  Rng rng = make_stream(seed, Stream::init);
  for (const auto& b : layout.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.cols));
    for (std::size_t i = 0; i < b.rows * b.cols; ++i) {
      p[static_cast<Eigen::Index>(b.weight_offset + i)] = rng.uniform(-bound, bound);
    }
  }
  return p;
}

ParamVector apply_mask(const ParamVector& params, const Mask& mask) {
  ParamVector out = params;
  apply_mask_inplace(out, mask);
  return out;
}

void apply_mask_inplace(ParamVector& params, const Mask& mask) {
  if (static_cast<std::size_t>(params.size()) != mask.size()) {
    throw ContractError("mask length " + std::to_string(mask.size()) +
                        " does not match parameter length " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) params[static_cast<Eigen::Index>(i)] = 0.0;
  }
}

ProbeSet ProbeSet::unit_vectors(std::size_t dim, std::size_t batch) {
  ProbeSet set;
  for (std::size_t k = 0; k < dim; ++k) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                              static_cast<Eigen::Index>(batch));
    e.row(static_cast<Eigen::Index>(k)).setOnes();
    set.directions.push_back(std::move(e));
    set.weights.push_back(1.0);
  }
  return set;
}

MlpBatch::MlpBatch(MlpSpec spec) : spec_(std::move(spec)), layout_(spec_) {}

void MlpBatch::forward(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& z, double t,
                       Eigen::MatrixXd& f) {
  run_forward(params, z, t, nullptr, f);
}

void MlpBatch::forward_with_divergence(const ParamVector& params,
                                       const Eigen::Ref<const Eigen::MatrixXd>& z,
                                       double t, const ProbeSet& probes, Eigen::MatrixXd& f,
                                       Eigen::VectorXd& div) {
  run_forward(params, z, t, &probes, f);
  const auto& out_dot = a_dot_.back();
  div.setZero(z.cols());
  for (std::size_t k = 0; k < probes.directions.size(); ++k) {
    div += probes.weights[k] *
           (probes.directions[k].array() * out_dot[k].array()).colwise().sum().matrix().transpose();
  }
}

void MlpBatch::run_forward(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& z, double t,
                           const ProbeSet* probes, Eigen::MatrixXd& f) {
  check_params(layout_, params);
  const auto dim = static_cast<Eigen::Index>(spec_.data_dim());
  if (z.rows() != dim) {
    throw ContractError("state has " + std::to_string(z.rows()) + " rows, network expects " +
                        std::to_string(dim));
  }
  const Eigen::Index batch = z.cols();
  const std::size_t n_layers = spec_.num_layers();
  const std::size_t n_probes = probes ? probes->directions.size() : 0;
  probes_ = probes;

  h_.resize(n_layers);
  s1_.resize(n_layers);
  a_dot_.resize(n_layers + 1);
  h_dot_.resize(n_layers);
  for (auto& v : a_dot_) v.resize(n_probes);
  for (auto& v : h_dot_) v.resize(n_probes);

  h_[0].resize(dim + 1, batch);
  h_[0].topRows(dim) = z;
  h_[0].row(dim).setConstant(t);

  const auto& blocks = layout_.layers();
  for (std::size_t l = 1; l <= n_layers; ++l) {
    const auto& blk = blocks[l - 1];
    const auto w = weights_of(params, blk);
    const auto b = bias_of(params, blk);
    const bool hidden = l < n_layers;
    Eigen::MatrixXd& out = hidden ? h_[l] : f;
    out.noalias() = w * h_[l - 1];
    out.colwise() += b;
    for (std::size_t k = 0; k < n_probes; ++k) {
      // Probes perturb z only; the time input has zero tangent.
      if (l == 1) {
        a_dot_[l][k].noalias() = w.leftCols(dim) * probes->directions[k];
      } else {
        a_dot_[l][k].noalias() = w * h_dot_[l - 1][k];
      }
    }
    if (hidden) {
      activate(spec_.activation, out, s1_[l]);
      for (std::size_t k = 0; k < n_probes; ++k) {
        h_dot_[l][k] = (s1_[l].array() * a_dot_[l][k].array()).matrix();
      }
    }
  }
}

void MlpBatch::backward(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& cot_f,
                        const Eigen::VectorXd* cot_div, Eigen::MatrixXd& grad_z,
                        Eigen::Ref<Eigen::VectorXd> grad_params) {
  check_params(layout_, params);
  if (grad_params.size() != params.size()) throw ContractError("gradient buffer size mismatch");
  const std::size_t n_layers = spec_.num_layers();
  const auto dim = static_cast<Eigen::Index>(spec_.data_dim());
  const std::size_t n_probes = (cot_div != nullptr && probes_ != nullptr) ? probes_->directions.size() : 0;
  const auto& blocks = layout_.layers();

  a_bar_ = cot_f;
  a_dot_bar_.resize(n_probes);
  h_dot_bar_.resize(n_probes);
  for (std::size_t k = 0; k < n_probes; ++k) {
    a_dot_bar_[k] = probes_->weights[k] *
                    (probes_->directions[k].array().rowwise() * cot_div->transpose().array()).matrix();
  }

  for (std::size_t l = n_layers; l >= 1; --l) {
    const auto& blk = blocks[l - 1];
    const auto w = weights_of(params, blk);
    Weights gw(grad_params.data() + blk.weight_offset, static_cast<Eigen::Index>(blk.rows),
               static_cast<Eigen::Index>(blk.cols));
    Eigen::Map<Eigen::VectorXd> gb(grad_params.data() + blk.bias_offset,
                                   static_cast<Eigen::Index>(blk.rows));

    gw.noalias() += a_bar_ * h_[l - 1].transpose();
    gb += a_bar_.rowwise().sum();
    for (std::size_t k = 0; k < n_probes; ++k) {
      if (l == 1) {
        gw.leftCols(dim).noalias() += a_dot_bar_[k] * probes_->directions[k].transpose();
      } else {
        gw.noalias() += a_dot_bar_[k] * h_dot_[l - 1][k].transpose();
      }
    }

    if (l == 1) {
      grad_z.noalias() = w.leftCols(dim).transpose() * a_bar_;
      break;
    }

    h_bar_.noalias() = w.transpose() * a_bar_;
    const auto& s1 = s1_[l - 1];
    a_bar_ = (s1.array() * h_bar_.array()).matrix();
    if (n_probes > 0) second_derivative(spec_.activation, h_[l - 1], s1, s2_);
    for (std::size_t k = 0; k < n_probes; ++k) {
      h_dot_bar_[k].noalias() = w.transpose() * a_dot_bar_[k];
      a_bar_.array() += s2_.array() * a_dot_[l - 1][k].array() * h_dot_bar_[k].array();
      a_dot_bar_[k] = (s1.array() * h_dot_bar_[k].array()).matrix();
    }
  }
}

Eigen::VectorXd mlp_forward(const MlpSpec& spec, const ParamVector& params,
                            const Eigen::VectorXd& z, double t) {
  MlpBatch net(spec);
  Eigen::MatrixXd f;
  net.forward(params, z, t, f);
  return f.col(0);
}

MlpVjp mlp_vjp(const MlpSpec& spec, const ParamVector& params, const Eigen::VectorXd& z,
               double t, const Eigen::VectorXd& cotangent) {
  if (cotangent.size() != static_cast<Eigen::Index>(spec.data_dim())) {
    throw ContractError("cotangent dimension mismatch");
  }
  MlpBatch net(spec);
  Eigen::MatrixXd f;
  net.forward(params, z, t, f);
  MlpVjp out;
  out.grad_params = ParamVector::Zero(params.size());
  Eigen::MatrixXd gz;
  net.backward(params, cotangent, nullptr, gz, out.grad_params);
  out.grad_z = gz.col(0);
  return out;
}

Eigen::MatrixXd jacobian_input(const MlpSpec& spec, const ParamVector& params,
                               const Eigen::VectorXd& z, double t) {
  const auto dim = static_cast<Eigen::Index>(spec.data_dim());
  MlpBatch net(spec);
  Eigen::MatrixXd f;
  net.forward(params, z, t, f);
  Eigen::MatrixXd jac(dim, dim);
  ParamVector scratch = ParamVector::Zero(params.size());
  Eigen::MatrixXd gz;
  for (Eigen::Index i = 0; i < dim; ++i) {
    net.backward(params, Eigen::VectorXd::Unit(dim, i), nullptr, gz, scratch);
    jac.row(i) = gz.col(0).transpose();
  }
  return jac;
}

}  // namespace sparseflow
