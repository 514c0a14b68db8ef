x();
y();
