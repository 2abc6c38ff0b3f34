#include <sstream>

#include "doctest.h"

#include "aspectmf/error.hpp"
#include "aspectmf/serialize.hpp"
#include "aspectmf/synthetic.hpp"

using namespace aspectmf;

TEST_CASE("model round trip") {
  SyntheticConfig sc;
  sc.num_users = 12;
  sc.num_items = 9;
  sc.rating_density = 0.4;
  sc.drift.bias = sc.drift.feature = sc.drift.feature_value = true;
  sc.drift.day_noise_std = 0.1;
  auto data = generate_synthetic(sc);

  std::ostringstream out;
  save_model(out, data.truth);
  std::istringstream in(out.str());
  auto back = load_model(in);
  CHECK(back == data.truth);

  std::ostringstream again;
  save_model(again, back);
  CHECK(again.str() == out.str());
}

TEST_CASE("malformed model files") {
  SyntheticConfig sc;
  sc.num_users = 4;
  sc.num_items = 4;
  sc.rating_density = 0.5;
  auto data = generate_synthetic(sc);
  std::ostringstream out;
  save_model(out, data.truth);
  const std::string text = out.str();

  std::istringstream truncated(text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(load_model(truncated), DataError);
  std::istringstream wrong("not a model\n");
  CHECK_THROWS_AS(load_model(wrong), DataError);
  std::istringstream empty("");
  CHECK_THROWS_AS(load_model(empty), DataError);
}
