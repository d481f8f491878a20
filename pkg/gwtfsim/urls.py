from django.contrib import admin
from django.urls import path, include

urlpatterns = [
    path('admin/', admin.site.urls),
    path('api/runs/', include('apps.harness.urls')),
    path('health/', include('apps.harness.health_urls')),
]

admin.site.site_header = "GWTF Simulator Administration"
admin.site.site_title = "GWTF Simulator Admin"
admin.site.index_title = "Experiment runs"
