from django.urls import path
from . import views

urlpatterns = [
    path('', views.list_runs),
    path('<uuid:run_id>/', views.get_run),
    path('<uuid:run_id>/iterations/', views.get_run_iterations),
]
