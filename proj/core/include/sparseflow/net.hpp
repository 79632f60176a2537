#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace sparseflow {

enum class Activation { sigmoid, tanh, relu, softplus };

/// How the time variable enters the network. Only concatenation is supported:
/// the input layer sees [z; t].
enum class TimeMode { concat };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Fully connected network f(z, t; theta) used as the right-hand side of a
/// neural ODE. layer_sizes lists every width including input and output; the
/// input width is data_dim + 1 because time is appended to z.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::sigmoid;
  TimeMode time_mode = TimeMode::concat;

  /// [dim + 1, hidden..., dim]
  static MlpSpec for_dimension(std::size_t dim, const std::vector<std::size_t>& hidden,
                               Activation activation);

  /// Throws ContractError for fewer than two layers, a zero width, or an
  /// input width that does not equal output width + 1.
  void validate() const;

  [[nodiscard]] std::size_t data_dim() const { return layer_sizes.back(); }
  [[nodiscard]] std::size_t num_layers() const { return layer_sizes.size() - 1; }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// One linear layer inside the flat parameter vector. The weight block is
/// row-major (rows = output units), so row i holds the incoming weights of
/// unit i. The bias block follows it immediately.
struct LayerBlock {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;

  [[nodiscard]] std::size_t weight_index(std::size_t row, std::size_t col) const {
    return weight_offset + row * cols + col;
  }
};

class ParamLayout {
 public:
  explicit ParamLayout(const MlpSpec& spec);

  [[nodiscard]] const std::vector<LayerBlock>& layers() const { return layers_; }
  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t weight_count() const { return weight_count_; }
  [[nodiscard]] std::size_t bias_count() const { return size_ - weight_count_; }
  [[nodiscard]] bool is_weight(std::size_t index) const;

 private:
  std::vector<LayerBlock> layers_;
  std::size_t size_ = 0;
  std::size_t weight_count_ = 0;
};

using ParamVector = Eigen::VectorXd;

/// Binary connection pattern aligned element-for-element with a ParamVector.
class Mask {
 public:
  Mask() = default;
  explicit Mask(std::vector<std::uint8_t> bits);
  static Mask ones(std::size_t n);
  static Mask zeros(std::size_t n);

  [[nodiscard]] std::size_t size() const { return bits_.size(); }
  [[nodiscard]] bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool on) { bits_[i] = on ? 1 : 0; }
  [[nodiscard]] std::size_t count() const;
  [[nodiscard]] const std::vector<std::uint8_t>& bits() const { return bits_; }
  /// True when every bit set here is also set in `other`.
  [[nodiscard]] bool subset_of(const Mask& other) const;
  /// The mask as a 0/1 real vector.
  [[nodiscard]] Eigen::VectorXd as_vector() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
ParamVector mlp_init(const MlpSpec& spec, std::uint64_t seed);

Eigen::VectorXd mlp_forward(const MlpSpec& spec, const ParamVector& params,
                            const Eigen::VectorXd& z, double t);

struct MlpVjp {
  Eigen::VectorXd grad_z;
  ParamVector grad_params;
};

/// cotangent^T df/dz and cotangent^T df/dtheta by reverse accumulation.
MlpVjp mlp_vjp(const MlpSpec& spec, const ParamVector& params, const Eigen::VectorXd& z,
               double t, const Eigen::VectorXd& cotangent);

/// df/dz, D x D. Row i is the VJP with cotangent e_i.
Eigen::MatrixXd jacobian_input(const MlpSpec& spec, const ParamVector& params,
                               const Eigen::VectorXd& z, double t);

ParamVector apply_mask(const ParamVector& params, const Mask& mask);
void apply_mask_inplace(ParamVector& params, const Mask& mask);

/// A probe set for the divergence term. For each probe k, the network returns
/// sum_k weight_k * p_kj^T J_j p_kj per column j, where J_j = df/dz at column j.
/// Hutchinson uses one random probe with weight 1 (or K probes weighted 1/K);
/// the exact trace uses the D unit vectors.
struct ProbeSet {
  std::vector<Eigen::MatrixXd> directions;  // each D x B
  std::vector<double> weights;

  [[nodiscard]] bool empty() const { return directions.empty(); }
  static ProbeSet unit_vectors(std::size_t dim, std::size_t batch);
};

/// Column-batched evaluation of an MlpSpec with a reverse pass that also
/// differentiates the divergence term. Each column of the input matrix is one
/// sample. The object owns scratch buffers and keeps a tape of the last
/// forward call; it is not thread-safe, but separate instances are.
class MlpBatch {
 public:
  explicit MlpBatch(MlpSpec spec);

  [[nodiscard]] const MlpSpec& spec() const { return spec_; }
  [[nodiscard]] const ParamLayout& layout() const { return layout_; }

  void forward(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& z, double t,
               Eigen::MatrixXd& f);

  /// Forward pass plus the probe-weighted Jacobian quadratic forms. `probes`
  /// must outlive the matching backward() call.
  void forward_with_divergence(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& z,
                               double t,
                               const ProbeSet& probes, Eigen::MatrixXd& f, Eigen::VectorXd& div);

  /// Reverse pass through the last forward call for the scalar
  ///   sum_j cot_f_j^T f_j + cot_div_j * div_j.
  /// grad_z is overwritten; grad_params is accumulated into. cot_div may be
  /// null when the last call was forward().
  void backward(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& cot_f,
                const Eigen::VectorXd* cot_div, Eigen::MatrixXd& grad_z,
                Eigen::Ref<Eigen::VectorXd> grad_params);

 private:
  void run_forward(const ParamVector& params, const Eigen::Ref<const Eigen::MatrixXd>& z, double t,
                   const ProbeSet* probes, Eigen::MatrixXd& f);

  MlpSpec spec_;
  ParamLayout layout_;
  const ProbeSet* probes_ = nullptr;
  // Tape. h_[0] is [z; t]; h_[l], s1_[l] are activations and their first
  // derivatives after hidden layer l. Tangent buffers are indexed [l][k].
  std::vector<Eigen::MatrixXd> h_;
  std::vector<Eigen::MatrixXd> s1_;
  std::vector<std::vector<Eigen::MatrixXd>> a_dot_;
  std::vector<std::vector<Eigen::MatrixXd>> h_dot_;
  // Backward scratch.
  Eigen::MatrixXd a_bar_, h_bar_, s2_;
  std::vector<Eigen::MatrixXd> a_dot_bar_, h_dot_bar_;
};

}  // namespace sparseflow
