#pragma once

#include "koopcert/errors.hpp"
#include "koopcert/linalg.hpp"
#include "koopcert/rng.hpp"
#include "koopcert/lifting.hpp"
#include "koopcert/dataset.hpp"
#include "koopcert/dataset_io.hpp"
#include "koopcert/certificates.hpp"
#include "koopcert/edmdc.hpp"
#include "koopcert/bounds.hpp"
#include "koopcert/simulators.hpp"
#include "koopcert/experiments.hpp"
#include "koopcert/report.hpp"
