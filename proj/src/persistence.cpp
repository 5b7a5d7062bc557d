#include "confopt/persistence.hpp"

namespace confopt {

using nlohmann::json;

json model_to_json(const ClassProbabilityModel& model) {
  const Mat& w = model.weights();
  json rows = json::array();
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < w.cols(); ++j) row.push_back(w(i, j));
    rows.push_back(row);
  }
  return json{{"n", model.n_classes()}, {"q", model.n_features()}, {"weights", rows}};
}

std::shared_ptr<const ClassProbabilityModel> model_from_json(const json& j) {
  try {
    const int n = j.at("n").get<int>();
    const int q = j.at("q").get<int>();
    const auto& rows = j.at("weights");
    if (static_cast<int>(rows.size()) != n) throw Error(ErrorCode::SchemaError, "weights rows != n");
    Mat w(n, q + 1);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(rows[i].size()) != q + 1) {
        throw Error(ErrorCode::SchemaError, "weights columns != q + 1");
      }
      for (int k = 0; k <= q; ++k) w(i, k) = rows[i][k].get<double>();
    }
    return std::make_shared<ClassProbabilityModel>(std::move(w));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("model: ") + e.what());
  }
}

json classifier_to_json(const RandomizedClassifier& h) {
  h.validate();
  auto model = std::dynamic_pointer_cast<const ClassProbabilityModel>(h.members.front().model);
  if (!model) throw Error(ErrorCode::SchemaError, "only softmax-linear models can be saved");
  json members = json::array();
  for (std::size_t t = 0; t < h.members.size(); ++t) {
    if (h.members[t].model != h.members.front().model) {
      throw Error(ErrorCode::SchemaError, "mixture members must share one model to be saved");
    }
    const Vec& l = h.members[t].raw_loss;
    members.push_back(json{{"weight", h.weights(static_cast<Eigen::Index>(t))},
                           {"loss", std::vector<double>(l.data(), l.data() + l.size())}});
  }
  return json{{"n", model->n_classes()},
              {"q", model->n_features()},
              {"m", h.members.front().n_groups},
              {"model", model_to_json(*model)},
              {"members", members}};
}

RandomizedClassifier classifier_from_json(const json& j) {
  try {
    auto model = model_from_json(j.at("model"));
    const int n = j.at("n").get<int>();
    const int m = j.at("m").get<int>();
    if (n != model->n_classes() || j.at("q").get<int>() != model->n_features()) {
      throw Error(ErrorCode::SchemaError, "classifier header disagrees with its model");
    }
    RandomizedClassifier h;
    std::vector<double> w;
    for (const auto& mem : j.at("members")) {
      auto loss = mem.at("loss").get<std::vector<double>>();
      if (static_cast<int>(loss.size()) != m * n * n) {
        throw Error(ErrorCode::SchemaError, "member loss must have m*n*n entries");
      }
      h.members.push_back({Eigen::Map<Vec>(loss.data(), static_cast<Eigen::Index>(loss.size())),
                           model, n, m});
      w.push_back(mem.at("weight").get<double>());
    }
    h.weights = Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
    h.validate(1e-9);
    return h;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("classifier: ") + e.what());
  }
}

}  // namespace confopt
