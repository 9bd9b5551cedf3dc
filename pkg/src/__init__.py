# dpbayes: differentially private Bayesian learning by posterior sampling
