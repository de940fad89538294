#include <algorithm>
#include <cmath>

#include "anyshot/errors.hpp"
#include "anyshot/neural.hpp"

namespace anyshot {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(std::span<Eigen::MatrixXd* const> params,
                                std::span<const Eigen::MatrixXd> analytic,
                                const std::function<double()>& loss, double h) {
  if (params.size() != analytic.size()) throw ShapeError("parameter and gradient lists differ in length");
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::MatrixXd& param = *params[p];
    if (analytic[p].rows() != param.rows() || analytic[p].cols() != param.cols()) {
      throw ShapeError("analytic gradient " + std::to_string(p) + " has the wrong shape");
    }
    for (Eigen::Index r = 0; r < param.rows(); ++r) {
      for (Eigen::Index c = 0; c < param.cols(); ++c) {
        const double saved = param(r, c);
        param(r, c) = saved + h;
        const double up = loss();
        param(r, c) = saved - h;
        const double down = loss();
        param(r, c) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double err = relative_error(analytic[p](r, c), numeric);
        ++report.entries_checked;
        if (!(err <= report.max_relative_error)) {
          report.max_relative_error = std::isnan(err) ? INFINITY : err;
          report.worst_parameter = p;
          report.worst_row = r;
          report.worst_col = c;
          report.worst_analytic = analytic[p](r, c);
          report.worst_numeric = numeric;
        }
      }
    }
  }
  return report;
}

GradCheckReport grad_check(DenseNet& net, const OutputLoss& loss_fn, const Eigen::MatrixXd& batch,
                           double h) {
  auto fwd = forward(net, batch);
  const LossAndGrad at = loss_fn(fwd.output);
  NetGradients grads = backward(net, fwd.cache, at.grad);

  Eigen::MatrixXd input = batch;
  std::vector<Eigen::MatrixXd*> params = net.parameters();
  params.push_back(&input);
  std::vector<Eigen::MatrixXd> analytic = std::move(grads.params);
  analytic.push_back(std::move(grads.input));
  return check_gradients(params, analytic, [&] { return loss_fn(predict(net, input)).loss; }, h);
}

}  // namespace anyshot
