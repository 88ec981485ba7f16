#pragma once

#include "bnrm/common.hpp"
#include "bnrm/rng.hpp"
#include "bnrm/model.hpp"
#include "bnrm/measure_change.hpp"
#include "bnrm/pricing.hpp"
#include "bnrm/insurance.hpp"
#include "bnrm/hedging.hpp"
#include "bnrm/lob.hpp"
#include "bnrm/ifa.hpp"
#include "bnrm/io.hpp"
#include "bnrm/runner.hpp"
