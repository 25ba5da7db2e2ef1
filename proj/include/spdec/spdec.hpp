#pragma once

#include "spdec/bench.hpp"
#include "spdec/checkpoint.hpp"
#include "spdec/decoding.hpp"
#include "spdec/drafting.hpp"
#include "spdec/model.hpp"
#include "spdec/nn.hpp"
#include "spdec/oracle.hpp"
#include "spdec/synthetic.hpp"
#include "spdec/tokenizer.hpp"
#include "spdec/types.hpp"
