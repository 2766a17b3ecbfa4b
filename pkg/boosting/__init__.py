# Boosting package