#pragma once

#include "truncflow/errors.hpp"
#include "truncflow/manifold.hpp"
#include "truncflow/training_set.hpp"
#include "truncflow/model.hpp"
#include "truncflow/measures.hpp"
#include "truncflow/rhs.hpp"
#include "truncflow/integrate.hpp"
#include "truncflow/closed_form.hpp"
#include "truncflow/oracle.hpp"
#include "truncflow/scenarios.hpp"
#include "truncflow/io.hpp"
#include "truncflow/run.hpp"
#include "truncflow/verify.hpp"
