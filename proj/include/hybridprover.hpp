#pragma once

#include "hybridprover/result.hpp"
#include "hybridprover/syntax.hpp"
#include "hybridprover/filter.hpp"
#include "hybridprover/sketch.hpp"
#include "hybridprover/model.hpp"
#include "hybridprover/checker.hpp"
#include "hybridprover/isabelle.hpp"
#include "hybridprover/parallel.hpp"
#include "hybridprover/orchestrator.hpp"
#include "hybridprover/dataprep.hpp"
#include "hybridprover/eval.hpp"
#include "hybridprover/cli.hpp"
