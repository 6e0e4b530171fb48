#pragma once

#include "asymcycle/adam.hpp"
#include "asymcycle/buffer.hpp"
#include "asymcycle/cohort_io.hpp"
#include "asymcycle/eval.hpp"
#include "asymcycle/experiment.hpp"
#include "asymcycle/layers.hpp"
#include "asymcycle/losses.hpp"
#include "asymcycle/metrics.hpp"
#include "asymcycle/nets.hpp"
#include "asymcycle/phantom.hpp"
#include "asymcycle/report.hpp"
#include "asymcycle/rng.hpp"
#include "asymcycle/stats.hpp"
#include "asymcycle/tensor.hpp"
#include "asymcycle/trainer.hpp"
